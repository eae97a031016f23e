"""Frozen content and speaker backends.

Two families live here. The toy backends are fixed seeded projections of
spectral statistics and run fully offline. The pretrained adapters wrap
external models and are imported lazily.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

from ..audio import Waveform, resample
from ..config import AudioConfig, ModelConfig
from ..dsp.spectral import MelConfig, StftConfig, linear_spectrogram, mel_spectrogram


class BackendUnavailable(RuntimeError):
    pass


def stft_config(audio: AudioConfig) -> StftConfig:
    return StftConfig(n_fft=audio.n_fft, hop=audio.hop, win=audio.win, sample_rate=audio.sample_rate)


def mel_config(audio: AudioConfig) -> MelConfig:
    return MelConfig(audio.n_mels, audio.f_min, audio.f_max)


def _trim_to_hop(w: Waveform, hop: int) -> Waveform:
    n = (len(w) // hop) * hop
    if n == 0:
        raise ValueError(f"waveform of {len(w)} samples is shorter than one frame ({hop})")
    return w if n == len(w) else Waveform(w.samples[:n], w.rate)


def _digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class ToyContentBackend:
    """Per-utterance mean-normalised log-mel frames through a fixed random projection.

    Removing the utterance mean strips the static spectral colouring that
    the toy speaker backend measures, so timbre has to come from ``g``.
    """

    frame_period = 0.02

    def __init__(self, audio: AudioConfig, dim: int, seed: int):
        self.audio = audio
        self.dim = dim
        self.stft = stft_config(audio)
        self.mel = mel_config(audio)
        rng = np.random.default_rng([seed, 1])
        self.projection = (rng.standard_normal((audio.n_mels, dim)) / np.sqrt(audio.n_mels)).astype(np.float32)

    def parameters(self):
        return [self.projection]

    def __call__(self, w: Waveform) -> np.ndarray:
        """(n_frames, dim) features, one row per hop."""
        if w.rate != self.audio.sample_rate:
            raise ValueError(f"content backend expects {self.audio.sample_rate} Hz, got {w.rate}")
        m = mel_spectrogram(_trim_to_hop(w, self.stft.hop), self.stft, self.mel).values
        m = m - m.mean(axis=0, keepdims=True)
        return m @ self.projection


class WavLMContentBackend:
    """Hidden states of a pretrained WavLM (1024-dim, 20 ms) from ``layer``."""

    frame_period = 0.02

    def __init__(self, model_name: str, layer: int, sample_rate: int = 16000):
        try:
            from transformers import WavLMModel
        except ImportError as exc:
            raise BackendUnavailable("WavLM content backend needs `pip install transformers`") from exc
        try:
            self.model = WavLMModel.from_pretrained(model_name).eval()
        except Exception as exc:
            raise BackendUnavailable(
                f"could not load {model_name!r}; download it into the Hugging Face cache or set model.content_model "
                "to a local path (or use model.content_backend=toy)"
            ) from exc
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.layer = layer
        self.sample_rate = sample_rate
        self.dim = self.model.config.hidden_size

    def parameters(self):
        return [p.detach().numpy() for p in self.model.parameters()]

    @torch.no_grad()
    def __call__(self, w: Waveform) -> np.ndarray:
        if w.rate != self.sample_rate:
            raise ValueError(f"content backend expects {self.sample_rate} Hz, got {w.rate}")
        x = torch.from_numpy(w.samples)[None]
        out = self.model(x, output_hidden_states=True)
        return out.hidden_states[self.layer][0].numpy()


class ToySpeakerBackend:
    """Long-term average log spectrum, mean-removed, projected and unit-normalised."""

    def __init__(self, audio: AudioConfig, dim: int, seed: int):
        self.audio = audio
        self.dim = dim
        self.stft = stft_config(audio)
        n_bins = self.stft.n_bins
        rng = np.random.default_rng([seed, 2])
        self.projection = (rng.standard_normal((n_bins, dim)) / np.sqrt(n_bins)).astype(np.float64)

    def parameters(self):
        return [self.projection]

    def embed(self, w: Waveform) -> np.ndarray:
        if w.rate != self.audio.sample_rate:
            w = resample(w, self.audio.sample_rate)
        lin = linear_spectrogram(_trim_to_hop(w, self.stft.hop), self.stft).values.astype(np.float64)
        energy = (lin**2).sum(axis=1)
        # ignore near-silent frames so pauses do not dominate the average
        voiced = energy > 1e-3 * energy.max() if energy.max() > 0 else np.ones_like(energy, bool)
        ltas = np.log(lin[voiced] + 1e-5).mean(axis=0)
        ltas -= ltas.mean()
        e = ltas @ self.projection
        n = np.linalg.norm(e)
        if n == 0:
            e = np.zeros(self.dim)
            e[0] = 1.0
            return e
        return e / n

    __call__ = embed


class ResemblyzerSpeakerBackend:
    """GE2E d-vectors from the ``resemblyzer`` package (already unit-norm)."""

    def __init__(self):
        try:
            from resemblyzer import VoiceEncoder
        except ImportError as exc:
            raise BackendUnavailable("speaker backend 'resemblyzer' needs `pip install resemblyzer`") from exc
        self.encoder = VoiceEncoder(device="cpu", verbose=False)
        self.dim = 256

    def parameters(self):
        return [p.detach().cpu().numpy() for p in self.encoder.parameters()]

    def embed(self, w: Waveform) -> np.ndarray:
        w = resample(w, 16000)
        e = np.asarray(self.encoder.embed_utterance(w.samples), dtype=np.float64)
        return e / np.linalg.norm(e)

    __call__ = embed


def content_backend(model: ModelConfig, audio: AudioConfig):
    if model.content_backend == "toy":
        return ToyContentBackend(audio, model.d_content, model.backend_seed)
    if model.content_backend == "wavlm":
        return WavLMContentBackend(model.content_model, model.content_layer, audio.sample_rate)
    raise BackendUnavailable(f"unknown content backend {model.content_backend!r}")


def speaker_backend(model: ModelConfig, audio: AudioConfig):
    if model.speaker_backend == "toy":
        return ToySpeakerBackend(audio, model.d_spk, model.backend_seed)
    if model.speaker_backend == "resemblyzer":
        return ResemblyzerSpeakerBackend()
    raise BackendUnavailable(f"unknown speaker backend {model.speaker_backend!r}")


def backend_digest(backend) -> str:
    return _digest(backend.parameters())


def align_frames(content: np.ndarray, n_frames: int, tolerance: int = 2) -> np.ndarray:
    """Trim content rows to ``min(len(content), n_frames)``.

    Callers trim their spectrogram grid to the returned length. A mismatch
    larger than ``tolerance`` frames is an error.
    """
    diff = content.shape[0] - n_frames
    if abs(diff) > tolerance:
        raise ValueError(f"content has {content.shape[0]} frames, spectrogram {n_frames}; mismatch exceeds {tolerance}")
    return content[: min(content.shape[0], n_frames)]
