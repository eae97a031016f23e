"""Pseudo paired data: teacher conversions of every source utterance.

For each source utterance the teacher renders its content in ``n``
voices drawn from other training speakers. The resulting audio is
materialised under ``pseudo/<teacher_tag>/<source_id>/<k>.wav`` and
indexed by a line-delimited manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, fit_length, read_wav, write_wav
from .corpus import Manifest, UtteranceRecord
from .model import VCModel, convert, file_digest, load_model

logger = logging.getLogger(__name__)

PSEUDO_KEYS = ("source_id", "pseudo_path", "reference_id", "reference_speaker", "seed", "teacher_tag")


@dataclass(frozen=True)
class PseudoEntry:
    pseudo_path: str
    source_id: str
    reference_id: str
    reference_speaker: str
    seed: int
    teacher_tag: str


@dataclass(frozen=True)
class PseudoSet:
    source_id: str
    entries: tuple[PseudoEntry, ...]

    def __len__(self):
        return len(self.entries)


@dataclass
class TeacherHandle:
    checkpoint: Path
    model: VCModel
    tag: str

    @classmethod
    def load(cls, checkpoint: str | Path) -> TeacherHandle:
        model, _ = load_model(checkpoint)
        return cls(Path(checkpoint), model.eval(), file_digest(checkpoint))


def source_seed(global_seed: int, source_id: str) -> int:
    """Seed depending only on (global seed, source id), independent of corpus order."""
    digest = hashlib.sha256(f"{global_seed}:{source_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


class ReferencePicker:
    """Draws references from speakers other than the source's.

    Speakers are taken without replacement (a fresh random permutation
    each time the pool runs out), the utterance uniformly within speaker.
    """

    def __init__(self, m: Manifest, source_speaker: str, rng: np.random.Generator):
        self.m = m
        self.speakers = [s for s in m.speakers if s != source_speaker]
        if not self.speakers:
            raise ValueError(f"no reference speaker other than {source_speaker!r} in the corpus")
        self.rng = rng
        self.pool: list[str] = []

    def __call__(self) -> UtteranceRecord:
        if not self.pool:
            self.pool = [self.speakers[i] for i in self.rng.permutation(len(self.speakers))]
        spk = self.pool.pop()
        utts = self.m.speakers[spk]
        return self.m[utts[int(self.rng.integers(len(utts)))]]


def generate_pseudo_set(
    t: TeacherHandle,
    source: UtteranceRecord,
    m: Manifest,
    n: int,
    rng: np.random.Generator,
    out_root: str | Path,
    seed: int = 0,
    load=None,
) -> PseudoSet:
    """Convert ``source`` ``n`` times and write the audio under ``out_root``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return PseudoSet(source.utterance_id, ())
    out_root = Path(out_root)
    load = load or m.load
    pick = ReferencePicker(m, source.speaker_id, rng)
    src = load(source)
    n_samples = (len(src) // t.model.hop) * t.model.hop
    entries = []
    for k in range(n):
        ref = pick()
        try:
            y = convert(t.model, src, load(ref))
        except Exception as exc:  # noqa: BLE001 - one retry with another reference
            logger.warning("teacher failed on %s with reference %s (%s); retrying", source.utterance_id, ref.utterance_id, exc)
            ref = pick()
            y = convert(t.model, src, load(ref))
        rel = f"pseudo/{t.tag}/{source.utterance_id}/{k}.wav"
        write_wav(out_root / rel, Waveform(fit_length(y.samples, n_samples), y.rate))
        entries.append(PseudoEntry(rel, source.utterance_id, ref.utterance_id, ref.speaker_id, seed, t.tag))
    return PseudoSet(source.utterance_id, tuple(entries))


def generate_all(
    t: TeacherHandle,
    sources: Manifest,
    references: Manifest,
    n: int,
    out_root: str | Path,
    global_seed: int = 0,
    workers: int = 1,
) -> list[PseudoSet]:
    """Pseudo sets for every source, ordered by source id; identical for any ``workers``."""

    def one(rec: UtteranceRecord) -> PseudoSet:
        seed = source_seed(global_seed, rec.utterance_id)
        return generate_pseudo_set(t, rec, references, n, np.random.default_rng(seed), out_root, seed, load=sources.load)

    records = sorted(sources.records, key=lambda r: r.utterance_id)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            sets = list(pool.map(one, records))
    else:
        sets = [one(r) for r in records]
    return sorted(sets, key=lambda s: s.source_id)


def write_pseudo_manifest(sets: list[PseudoSet], path: str | Path, root: str | Path | None = None) -> None:
    """``pseudo_path`` values are relative to ``root`` (default: the manifest's directory)."""
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    missing = [e.pseudo_path for s in sets for e in s.entries if not (root / e.pseudo_path).is_file()]
    if missing:
        raise FileNotFoundError(f"pseudo audio missing: {missing[:10]}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for s in sorted(sets, key=lambda s: s.source_id):
            for e in s.entries:
                row = asdict(e)
                f.write(json.dumps({k: row[k] for k in PSEUDO_KEYS}) + "\n")


def read_pseudo_manifest(path: str | Path, n_expected: int | None = None, root: str | Path | None = None) -> list[PseudoSet]:
    """Read and validate: every source has ``n_expected`` entries and every file exists."""
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    grouped: dict[str, list[PseudoEntry]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if set(obj) != set(PSEUDO_KEYS):
                raise ValueError(f"{path}:{lineno}: expected keys {PSEUDO_KEYS}, got {sorted(obj)}")
            grouped.setdefault(obj["source_id"], []).append(PseudoEntry(**obj))
    problems = []
    if n_expected is not None:
        for sid, entries in grouped.items():
            if len(entries) != n_expected:
                problems.append(f"{sid} has {len(entries)} pseudo entries, expected {n_expected}")
    if problems:
        raise ValueError("; ".join(problems))
    missing = [e.pseudo_path for es in grouped.values() for e in es if not (root / e.pseudo_path).is_file()]
    if missing:
        raise FileNotFoundError(f"pseudo audio missing: {missing}")
    return [PseudoSet(sid, tuple(grouped[sid])) for sid in sorted(grouped)]


def sample_pseudo(s: PseudoSet, rng: np.random.Generator) -> PseudoEntry:
    if not s.entries:
        raise ValueError(f"pseudo set for {s.source_id} is empty")
    return s.entries[int(rng.integers(len(s.entries)))]


def load_pseudo(root: str | Path, e: PseudoEntry) -> Waveform:
    return read_wav(Path(root) / e.pseudo_path)
