from .perturb import PerturbParams, apply_perturbation, perturb, perturb_nansy, perturb_sr, perturb_vtlp, sample_params
from .spectral import LinSpec, MelConfig, MelSpec, StftConfig, linear_spectrogram, mel_spectrogram

__all__ = [
    "LinSpec",
    "MelConfig",
    "MelSpec",
    "PerturbParams",
    "StftConfig",
    "apply_perturbation",
    "linear_spectrogram",
    "mel_spectrogram",
    "perturb",
    "perturb_nansy",
    "perturb_sr",
    "perturb_vtlp",
    "sample_params",
]
