"""Signal-level information perturbation: VTLP, NANSY-style and SR.

Each function preserves the input sample count exactly and is a pure
function of its inputs and seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample as fft_resample
from scipy.signal import sosfilt

from ..audio import Waveform
from .spectral import istft_np, stft_np

N_FFT = 1024
HOP = 256
VTLP_RANGE = (0.9, 1.1)
SR_RANGE = (0.85, 1.15)
VTLP_F_HI = 4800.0
GRIFFIN_LIM_ITERS = 32
CEPSTRAL_LIFTER = 30
MAX_ENVELOPE_GAIN = 16.0


@dataclass(frozen=True)
class PeqBand:
    kind: str  # "low_shelf" | "high_shelf" | "peak"
    freq: float
    q: float
    gain_db: float


@dataclass(frozen=True)
class PerturbParams:
    method: str
    vtlp_warp: float = 1.0
    formant_shift: float = 1.0
    pitch_ratio: float = 1.0
    peq_curve: tuple[PeqBand, ...] = field(default=())
    sr_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("vtlp", "nansy", "sr"):
            raise ValueError(f"unknown perturbation method {self.method!r}")
        if not VTLP_RANGE[0] <= self.vtlp_warp <= VTLP_RANGE[1]:
            raise ValueError(f"vtlp warp {self.vtlp_warp} outside {VTLP_RANGE}")
        if not SR_RANGE[0] <= self.sr_ratio <= SR_RANGE[1]:
            raise ValueError(f"sr ratio {self.sr_ratio} outside {SR_RANGE}")
        if self.pitch_ratio <= 0 or self.formant_shift <= 0:
            raise ValueError("pitch ratio and formant shift must be positive")


def _finish(y: np.ndarray, w: Waveform) -> Waveform:
    y = np.nan_to_num(y[: len(w)])
    if y.size < len(w):
        y = np.pad(y, (0, len(w) - y.size))
    peak = np.max(np.abs(y))
    if peak > 1.0:
        y = y / peak
    return Waveform(y, w.rate)


# -- VTLP --------------------------------------------------------------------


def vtlp_warp_frequencies(freqs: np.ndarray, warp: float, sample_rate: int, f_hi: float = VTLP_F_HI) -> np.ndarray:
    """Piecewise-linear VTLP map: scale by ``warp`` below a knee, then pin Nyquist."""
    nyq = sample_rate / 2
    knee = f_hi * min(warp, 1.0) / warp
    upper = nyq - (nyq - f_hi * min(warp, 1.0)) / (nyq - knee) * (nyq - freqs)
    return np.where(freqs <= knee, freqs * warp, upper)


def _warp_spectrum(spec: np.ndarray, src_bins: np.ndarray) -> np.ndarray:
    """Resample each frame along frequency: output bin k reads input position ``src_bins[k]``."""
    n_bins = spec.shape[0]
    mag = np.abs(spec)
    pos = np.clip(src_bins, 0, n_bins - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_bins - 1)
    frac = (pos - lo)[:, None]
    new_mag = (1 - frac) * mag[lo] + frac * mag[hi]
    new_mag[src_bins > n_bins - 1] = 0.0
    phase = np.angle(spec[np.clip(np.rint(pos).astype(int), 0, n_bins - 1)])
    return new_mag * np.exp(1j * phase)


def perturb_vtlp(w: Waveform, warp: float | None = None, rng: np.random.Generator | None = None) -> Waveform:
    """Vocal tract length perturbation; ``warp`` is drawn from U(0.9, 1.1) when omitted."""
    if warp is None:
        if rng is None:
            raise ValueError("either warp or rng is required")
        warp = float(rng.uniform(*VTLP_RANGE))
    if not VTLP_RANGE[0] <= warp <= VTLP_RANGE[1]:
        raise ValueError(f"vtlp warp {warp} outside {VTLP_RANGE}")
    x = w.samples.astype(np.float64)
    spec = stft_np(x, N_FFT, HOP)
    freqs = np.linspace(0, w.rate / 2, spec.shape[0])
    warped = vtlp_warp_frequencies(freqs, warp, w.rate)
    # invert the monotone map on the bin grid
    src = np.interp(freqs, warped, freqs) / (freqs[1] - freqs[0])
    return _finish(istft_np(_warp_spectrum(spec, src), N_FFT, HOP, len(w)), w)


# -- NANSY-style ----------------------------------------------------------------


def _biquad(band: PeqBand, fs: int) -> np.ndarray:
    """RBJ cookbook biquad as one SOS row."""
    A = 10 ** (band.gain_db / 40)
    w0 = 2 * np.pi * band.freq / fs
    alpha = np.sin(w0) / (2 * band.q)
    cw = np.cos(w0)
    if band.kind == "peak":
        b = [1 + alpha * A, -2 * cw, 1 - alpha * A]
        a = [1 + alpha / A, -2 * cw, 1 - alpha / A]
    elif band.kind in ("low_shelf", "high_shelf"):
        sq = 2 * np.sqrt(A) * alpha
        s = 1 if band.kind == "low_shelf" else -1
        b = [A * ((A + 1) - s * (A - 1) * cw + sq), s * 2 * A * ((A - 1) - s * (A + 1) * cw), A * ((A + 1) - s * (A - 1) * cw - sq)]
        a = [(A + 1) + s * (A - 1) * cw + sq, -s * 2 * ((A - 1) + s * (A + 1) * cw), (A + 1) + s * (A - 1) * cw - sq]
    else:
        raise ValueError(f"unknown PEQ band kind {band.kind!r}")
    b, a = np.asarray(b) / a[0], np.asarray(a) / a[0]
    return np.concatenate([b, a])


def frequency_shaping(x: np.ndarray, curve: tuple[PeqBand, ...], fs: int) -> np.ndarray:
    if not curve:
        return x
    return sosfilt(np.stack([_biquad(b, fs) for b in curve]), x)


def time_stretch(x: np.ndarray, rate: float) -> np.ndarray:
    """Phase-vocoder stretch; output lasts ``len(x) / rate`` samples."""
    spec = stft_np(x, N_FFT, HOP)
    n_bins, n_frames = spec.shape
    steps = np.arange(0, n_frames - 1, rate)
    advance = np.linspace(0, np.pi * HOP, n_bins)
    phase = np.angle(spec[:, 0])
    out = np.empty((n_bins, steps.size), dtype=complex)
    padded = np.concatenate([spec, np.zeros((n_bins, 2))], axis=1)
    for t, step in enumerate(steps):
        i = int(step)
        frac = step - i
        a, b = padded[:, i], padded[:, i + 1]
        out[:, t] = ((1 - frac) * np.abs(a) + frac * np.abs(b)) * np.exp(1j * phase)
        dphi = np.angle(b) - np.angle(a) - advance
        dphi -= 2 * np.pi * np.round(dphi / (2 * np.pi))
        phase = phase + advance + dphi
    length = int(round(x.size / rate))
    return istft_np(out, N_FFT, HOP, length)


def _envelope(mag: np.ndarray, lifter: int = CEPSTRAL_LIFTER) -> np.ndarray:
    """Cepstrally smoothed spectral envelope per frame (bins, frames)."""
    floor = 1e-4 * np.max(mag, axis=0, keepdims=True) + 1e-8
    ceps = np.fft.irfft(np.log(mag + floor), axis=0)
    ceps[lifter:-lifter] = 0.0
    return np.exp(np.fft.rfft(ceps, axis=0).real)


def shift_formants(x: np.ndarray, ratio: float) -> np.ndarray:
    """Move the spectral envelope by ``ratio`` keeping harmonics in place."""
    spec = stft_np(x, N_FFT, HOP)
    env = _envelope(np.abs(spec))
    bins = np.arange(spec.shape[0], dtype=float)
    src = bins / ratio
    warped = np.stack([np.interp(src, bins, env[:, t], right=env[-1, t]) for t in range(env.shape[1])], axis=1)
    gain = np.clip(warped / np.maximum(env, 1e-12), MAX_ENVELOPE_GAIN**-1, MAX_ENVELOPE_GAIN)
    return istft_np(spec * gain, N_FFT, HOP, x.size)


def shift_pitch(x: np.ndarray, ratio: float) -> np.ndarray:
    """Scale f0 by ``ratio`` at constant duration, then restore the envelope."""
    stretched = time_stretch(x, 1.0 / ratio)
    y = fft_resample(stretched, x.size)
    return shift_formants(y, 1.0 / ratio)


def sample_nansy_params(rng: np.random.Generator, fs: int = 16000, seed: int = 0) -> PerturbParams:
    """Draw parameters from the NANSY ranges (formant U(1,1.4), pitch U(1,2), random inversion)."""
    formant = rng.uniform(1.0, 1.4)
    if rng.random() < 0.5:
        formant = 1 / formant
    pitch = rng.uniform(1.0, 2.0)
    if rng.random() < 0.5:
        pitch = 1 / pitch
    centers = np.geomspace(150.0, 0.4 * fs, 8)
    q_min, q_max = 2.0, 5.0
    bands = [PeqBand("low_shelf", 60.0, 1 / np.sqrt(2), rng.uniform(-12, 12))]
    for f in centers:
        bands.append(PeqBand("peak", float(f), q_min * (q_max / q_min) ** rng.random(), rng.uniform(-12, 12)))
    bands.append(PeqBand("high_shelf", 0.45 * fs, 1 / np.sqrt(2), rng.uniform(-12, 12)))
    return PerturbParams("nansy", formant_shift=float(formant), pitch_ratio=float(pitch), peq_curve=tuple(bands), seed=seed)


def perturb_nansy(w: Waveform, p: PerturbParams, rng: np.random.Generator | None = None) -> Waveform:
    """Frequency shaping, then pitch randomization, then formant shifting."""
    if p.method != "nansy":
        raise ValueError(f"expected nansy params, got {p.method!r}")
    if p.pitch_ratio <= 0:
        raise ValueError("pitch ratio must be positive")
    x = frequency_shaping(w.samples.astype(np.float64), p.peq_curve, w.rate)
    if p.pitch_ratio != 1.0:
        x = shift_pitch(x, p.pitch_ratio)
    if p.formant_shift != 1.0:
        x = shift_formants(x, p.formant_shift)
    return _finish(x, w)


# -- SR ----------------------------------------------------------------------


def griffin_lim(mag: np.ndarray, phase: np.ndarray, length: int, n_iter: int = GRIFFIN_LIM_ITERS) -> np.ndarray:
    """Iterative phase estimation starting from ``phase``."""
    spec = mag * np.exp(1j * phase)
    y = istft_np(spec, N_FFT, HOP, length)
    for _ in range(n_iter):
        rebuilt = stft_np(y, N_FFT, HOP)
        spec = mag * np.exp(1j * np.angle(rebuilt))
        y = istft_np(spec, N_FFT, HOP, length)
    return y


def perturb_sr(w: Waveform, ratio: float) -> Waveform:
    """Vertical spectrogram resize by ``ratio``; content above Nyquist is cropped."""
    if not SR_RANGE[0] <= ratio <= SR_RANGE[1]:
        raise ValueError(f"sr ratio {ratio} outside {SR_RANGE}")
    spec = stft_np(w.samples.astype(np.float64), N_FFT, HOP)
    n_bins = spec.shape[0]
    bins = np.arange(n_bins, dtype=float)
    mag = np.abs(spec)
    resized = np.stack([np.interp(bins / ratio, bins, mag[:, t], right=0.0) for t in range(mag.shape[1])], axis=1)
    return _finish(griffin_lim(resized, np.angle(spec), len(w)), w)


# -- dispatch ----------------------------------------------------------------


def sample_params(method: str, rng: np.random.Generator, fs: int = 16000, seed: int = 0) -> PerturbParams:
    if method == "vtlp":
        return PerturbParams("vtlp", vtlp_warp=float(rng.uniform(*VTLP_RANGE)), seed=seed)
    if method == "sr":
        return PerturbParams("sr", sr_ratio=float(rng.uniform(*SR_RANGE)), seed=seed)
    if method == "nansy":
        return sample_nansy_params(rng, fs, seed)
    raise ValueError(f"unknown perturbation method {method!r}")


def apply_perturbation(w: Waveform, p: PerturbParams) -> Waveform:
    if p.method == "vtlp":
        return perturb_vtlp(w, p.vtlp_warp)
    if p.method == "sr":
        return perturb_sr(w, p.sr_ratio)
    return perturb_nansy(w, p)


def perturb(w: Waveform, method: str, seed: int) -> Waveform:
    """Draw parameters for ``method`` from ``seed`` and apply them."""
    rng = np.random.default_rng(seed)
    return apply_perturbation(w, sample_params(method, rng, w.rate, seed))
