"""Waveform container, WAV I/O and resampling."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio in [-1, 1] at ``rate`` Hz."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("waveform is empty")
        if self.rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.rate == other.rate and np.array_equal(self.samples, other.samples)


def read_wav(path: str | Path) -> Waveform:
    """Read a WAV file, averaging channels and scaling integer PCM to [-1, 1]."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float32) - 128.0) / 128.0
    else:
        x = data.astype(np.float32)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return Waveform(np.clip(x, -1.0, 1.0), int(rate))


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write 16-bit PCM mono."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(str(path), w.rate, pcm)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == w.rate:
        return w
    ratio = Fraction(int(target_rate), int(w.rate))
    y = resample_poly(w.samples.astype(np.float64), ratio.numerator, ratio.denominator)
    return Waveform(np.clip(y, -1.0, 1.0), int(target_rate))


def normalize_peak(w: Waveform, peak: float = 0.95) -> Waveform:
    """Scale down so that max |x| <= peak; quieter signals are left alone."""
    m = float(np.max(np.abs(w.samples)))
    if m <= peak:
        return w
    return Waveform(w.samples * (peak / m), w.rate)


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Trim or zero-pad a 1-D array to exactly ``n`` samples."""
    if x.size >= n:
        return x[:n]
    return np.pad(x, (0, n - x.size))
