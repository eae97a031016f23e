"""Frame-aligned STFT, linear and log-mel spectrograms.

Frames are produced with reflect padding of ``(n_fft - hop) / 2`` on both
sides and no centering, so a signal of ``n`` samples (``n % hop == 0``)
gives exactly ``n / hop`` frames. The torch functions are differentiable
and are used both for features and for the reconstruction loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from ..audio import Waveform

LOG_FLOOR = 1e-5
# keeps d|X|/dX finite at X = 0 while |X| of silence stays exactly zero
_MAG_EPS = 1e-12


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 1280
    hop: int = 320
    win: int = 1280
    center: bool = False
    pad_mode: str = "reflect"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.hop <= 0:
            raise ValueError("hop must be positive")
        if self.win > self.n_fft:
            raise ValueError("win must not exceed n_fft")
        if self.win % self.hop:
            raise ValueError("hop must divide win")
        if (self.n_fft - self.hop) % 2:
            raise ValueError("n_fft - hop must be even for frame-aligned padding")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float | None = None


@dataclass(frozen=True, eq=False)
class MelSpec:
    values: np.ndarray  # (n_frames, n_mels), natural-log amplitude
    config: MelConfig


@dataclass(frozen=True, eq=False)
class LinSpec:
    values: np.ndarray  # (n_frames, n_fft // 2 + 1), magnitude


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, f_min: float, f_max: float | None) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1), unit peak."""
    f_max = sample_rate / 2 if f_max is None else f_max
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_freqs[None, :] - lower) / (center - lower)
    down = (upper - fft_freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def _frame_pad(y: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    pad = (cfg.n_fft - cfg.hop) // 2
    if y.shape[-1] <= pad:
        mode = "constant"
    else:
        mode = cfg.pad_mode
    return F.pad(y.unsqueeze(1), (pad, pad), mode=mode).squeeze(1)


def stft_magnitude(y: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    """|STFT| of (batch, samples) -> (batch, n_bins, frames)."""
    if y.shape[-1] == 0:
        raise ValueError("empty waveform")
    window = torch.hann_window(cfg.win, dtype=y.dtype, device=y.device)
    spec = torch.stft(
        _frame_pad(y, cfg),
        cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.win,
        window=window,
        center=cfg.center,
        return_complex=True,
    )
    power = spec.real.pow(2) + spec.imag.pow(2)
    return torch.sqrt(power + _MAG_EPS) - _MAG_EPS**0.5


def mel_from_magnitude(mag: torch.Tensor, cfg: StftConfig, mel: MelConfig) -> torch.Tensor:
    fb = torch.tensor(
        mel_filterbank(cfg.sample_rate, cfg.n_fft, mel.n_mels, mel.f_min, mel.f_max),
        dtype=mag.dtype,
        device=mag.device,
    )
    return torch.log(torch.clamp(torch.matmul(fb, mag), min=LOG_FLOOR))


def mel_torch(y: torch.Tensor, cfg: StftConfig, mel: MelConfig) -> torch.Tensor:
    """Log-mel of (batch, samples) -> (batch, n_mels, frames)."""
    return mel_from_magnitude(stft_magnitude(y, cfg), cfg, mel)


def _check(w: Waveform, cfg: StftConfig) -> torch.Tensor:
    if w.rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.rate} does not match STFT rate {cfg.sample_rate}")
    if len(w) % cfg.hop:
        raise ValueError(f"waveform length {len(w)} is not a multiple of hop {cfg.hop}")
    return torch.from_numpy(w.samples.astype(np.float32))[None]


def linear_spectrogram(w: Waveform, cfg: StftConfig) -> LinSpec:
    with torch.no_grad():
        mag = stft_magnitude(_check(w, cfg), cfg)[0]
    return LinSpec(mag.T.numpy())


def mel_spectrogram(w: Waveform, cfg: StftConfig, mel: MelConfig | None = None) -> MelSpec:
    mel = mel or MelConfig()
    with torch.no_grad():
        values = mel_torch(_check(w, cfg), cfg, mel)[0]
    return MelSpec(values.T.numpy(), mel)


# numpy STFT pair with perfect reconstruction for the perturbation code


def stft_np(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered Hann STFT, (bins, frames) complex128."""
    window = np.hanning(n_fft + 1)[:-1]
    pad = n_fft // 2
    xp = np.pad(x.astype(np.float64), (pad, pad + n_fft), mode="constant")
    n_frames = 1 + (x.size + 2 * pad - n_fft) // hop + 1
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(xp[idx] * window, axis=1).T


def istft_np(spec: np.ndarray, n_fft: int, hop: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft_np`."""
    window = np.hanning(n_fft + 1)[:-1]
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * window
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(n_frames):
        out[t * hop : t * hop + n_fft] += frames[t]
        norm[t * hop : t * hop + n_fft] += window**2
    out /= np.where(norm > 1e-8, norm, 1.0)
    pad = n_fft // 2
    return out[pad : pad + length]
