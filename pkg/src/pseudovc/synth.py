"""Synthetic speaker corpus for desk-scale runs.

Every speaker has a fixed timbre (f0 register, vocal-tract length scale,
spectral tilt); every utterance is a random sequence of vowel "words".
Harmonics are shaped by formant resonances, so content (formant pattern
over time) and speaker (register and colouring) are separable.

Usage: ``python -m pseudovc.synth OUT_DIR [--speakers 4] [--utterances 4]``
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav

VOWELS = {
    "a": (730.0, 1090.0, 2440.0),
    "e": (530.0, 1840.0, 2480.0),
    "i": (270.0, 2290.0, 3010.0),
    "o": (570.0, 840.0, 2410.0),
    "u": (300.0, 870.0, 2240.0),
}
WORDS = ["ai", "ou", "ea", "iu", "oa", "ue", "ie", "ao", "eu", "oi"]


@dataclass(frozen=True)
class Voice:
    f0: float
    tract_scale: float
    tilt: float


def make_voices(n: int, rng: np.random.Generator) -> list[Voice]:
    f0s = np.linspace(95.0, 240.0, n) * rng.uniform(0.95, 1.05, n)
    scales = np.linspace(0.85, 1.2, n)[rng.permutation(n)]
    tilts = rng.uniform(-1.6, -0.6, n)
    return [Voice(float(f), float(s), float(t)) for f, s, t in zip(f0s, scales, tilts)]


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    k = np.hanning(width)
    k /= k.sum()
    pad = np.pad(x, (width, width), mode="edge")
    return np.convolve(pad, k, mode="same")[width:-width]


def synthesize(words: list[str], voice: Voice, rng: np.random.Generator, rate: int = 24000, noise: float = 0.002) -> np.ndarray:
    seg = []
    for word in words:
        for ph in word:
            seg.append((VOWELS[ph], int(rate * rng.uniform(0.08, 0.14))))
        seg.append((None, int(rate * rng.uniform(0.03, 0.06))))
    n = sum(d for _, d in seg)
    formants = np.zeros((3, n))
    gain = np.zeros(n)
    pos = 0
    last = VOWELS["a"]
    for fm, d in seg:
        if fm is not None:
            last = fm
            gain[pos : pos + d] = 1.0
        formants[:, pos : pos + d] = np.asarray(last)[:, None] * voice.tract_scale
        pos += d
    width = int(0.02 * rate)
    formants = np.stack([_smooth(f, width) for f in formants])
    gain = _smooth(gain, width)
    t = np.arange(n) / rate
    f0 = voice.f0 * (1.0 + 0.04 * np.sin(2 * np.pi * rng.uniform(1.5, 3.0) * t + rng.uniform(0, 6.3)))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    y = np.zeros(n)
    bandwidths = (90.0, 110.0, 150.0)
    for h in range(1, int((0.45 * rate) / f0.min())):
        fh = h * f0
        env = sum(1.0 / (1.0 + ((fh - formants[k]) / bandwidths[k]) ** 2) for k in range(3))
        env = env * (fh / 100.0) ** (voice.tilt * 0.5)
        y += env * np.sin(h * phase)
    y *= gain
    y += noise * rng.standard_normal(n)
    return 0.8 * y / np.max(np.abs(y))


def make_corpus(
    out_dir: str | Path,
    n_speakers: int = 4,
    n_utterances: int = 4,
    seed: int = 0,
    rate: int = 24000,
    n_words: tuple[int, int] = (3, 6),
    noise: float = 0.002,
) -> Path:
    """Write ``<out>/<speaker>/<speaker>_<k>.wav`` plus ``transcripts.tsv``."""
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    voices = make_voices(n_speakers, rng)
    lines = []
    for s, voice in enumerate(voices):
        spk = f"spk{s:02d}"
        for u in range(n_utterances):
            words = list(rng.choice(WORDS, size=int(rng.integers(n_words[0], n_words[1] + 1))))
            y = synthesize(words, voice, rng, rate, noise)
            utt = f"{spk}_{u:03d}"
            write_wav(out / spk / f"{utt}.wav", Waveform(y, rate))
            lines.append(f"{utt}\t{' '.join(words)}")
    (out / "transcripts.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--speakers", type=int, default=4)
    ap.add_argument("--utterances", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rate", type=int, default=24000)
    args = ap.parse_args(argv)
    make_corpus(args.out_dir, args.speakers, args.utterances, args.seed, args.rate)


if __name__ == "__main__":
    main()
