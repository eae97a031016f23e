"""Corpus manifests: ingestion, splitting and same-speaker lookup."""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import Waveform, normalize_peak, read_wav, resample, write_wav

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_KEYS = ("utterance_id", "speaker_id", "path", "sample_rate", "n_samples", "split")


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    speaker_id: str
    path: str
    sample_rate: int
    n_samples: int
    split: str = "train"

    def __post_init__(self):
        if not self.utterance_id:
            raise ValueError("utterance_id must be non-empty")
        if self.sample_rate <= 0:
            raise ValueError(f"{self.utterance_id}: sample_rate must be positive")
        if self.n_samples <= 0:
            raise ValueError(f"{self.utterance_id}: n_samples must be positive")
        if self.split not in SPLITS:
            raise ValueError(f"{self.utterance_id}: unknown split {self.split!r}")
        if "\\" in self.path or Path(self.path).is_absolute() or ".." in Path(self.path).parts:
            raise ValueError(f"{self.utterance_id}: path must be relative with forward slashes")


@dataclass(frozen=True)
class Manifest:
    """An ordered, immutable set of utterances rooted at ``root``."""

    root: Path
    records: tuple[UtteranceRecord, ...]
    speakers: Mapping[str, tuple[str, ...]] = field(default=None, compare=True)
    skipped: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        groups: dict[str, list[str]] = {}
        for r in self.records:
            if r.utterance_id in seen:
                raise ValueError(f"duplicate utterance_id {r.utterance_id!r}")
            seen.add(r.utterance_id)
            groups.setdefault(r.speaker_id, []).append(r.utterance_id)
        object.__setattr__(self, "speakers", {k: tuple(v) for k, v in sorted(groups.items())})
        object.__setattr__(self, "_by_id", {r.utterance_id: r for r in self.records})

    def __len__(self):
        return len(self.records)

    def __getitem__(self, utterance_id: str) -> UtteranceRecord:
        return self._by_id[utterance_id]

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self._by_id

    def resolve(self, record: UtteranceRecord) -> Path:
        return self.root / record.path

    def load(self, record: UtteranceRecord | str) -> Waveform:
        if isinstance(record, str):
            record = self[record]
        return read_wav(self.resolve(record))

    def subset(self, split: str | None) -> Manifest:
        """Records of one split; ``None`` or ``"all"`` returns everything."""
        if split in (None, "all"):
            return self
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return Manifest(self.root, [r for r in self.records if r.split == split])

    def require_nonempty(self, purpose: str = "training") -> None:
        if not self.records:
            raise ValueError(f"manifest rooted at {self.root} has no records; cannot use it for {purpose}")


@dataclass(frozen=True)
class Layout:
    """Where to find audio under a corpus root.

    ``speaker_dirs``: ``<root>/<speaker>/**/<file>`` with the first path
    component naming the speaker. ``metadata``: a CSV/TSV file with
    ``path`` and ``speaker_id`` columns (optional ``utterance_id``).
    """

    kind: str = "speaker_dirs"
    pattern: str = "*.wav"
    metadata: str | None = None


def _scan(root: Path, layout: Layout) -> list[tuple[str, str, str]]:
    if layout.kind == "speaker_dirs":
        items = []
        for p in sorted(root.glob(f"*/**/{layout.pattern}")):
            rel = p.relative_to(root).as_posix()
            items.append((p.stem, rel.split("/")[0], rel))
        return items
    if layout.kind == "metadata":
        if layout.metadata is None:
            raise ValueError("metadata layout requires a metadata file")
        meta = root / layout.metadata
        delim = "\t" if meta.suffix in (".tsv", ".txt") else ","
        items = []
        with open(meta, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f, delimiter=delim):
                rel = Path(row["path"]).as_posix()
                utt = row.get("utterance_id") or Path(rel).stem
                items.append((utt, row["speaker_id"], rel))
        return sorted(items, key=lambda t: t[2])
    raise ValueError(f"unknown layout kind {layout.kind!r}")


def ingest_corpus(root: str | Path, layout: Layout | None = None) -> Manifest:
    """Scan ``root`` into a manifest; unreadable files are skipped and reported."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root does not exist: {root}")
    layout = layout or Layout()
    records, skipped = [], []
    for utt, spk, rel in _scan(root, layout):
        try:
            w = read_wav(root / rel)
        except Exception as exc:  # noqa: BLE001 - any decode failure skips the file
            skipped.append(rel)
            logger.debug("skipping %s: %s", rel, exc)
            continue
        records.append(UtteranceRecord(utt, spk, rel, w.rate, len(w)))
    if skipped:
        logger.warning("skipped %d unreadable audio file(s): %s", len(skipped), ", ".join(skipped[:10]))
    return Manifest(root, records, skipped=tuple(skipped))


def prepare_corpus(m: Manifest, out_dir: str | Path, rate: int, hop: int, peak: float = 0.95) -> Manifest:
    """Resample, peak-normalize and trim every utterance to a multiple of ``hop``.

    Writes 16-bit WAVs under ``out_dir/wav/<speaker>/<utterance>.wav``.
    Utterances shorter than one hop are dropped.
    """
    out_dir = Path(out_dir)
    records = []
    for r in m.records:
        w = normalize_peak(resample(m.load(r), rate), peak)
        n = (len(w) // hop) * hop
        if n == 0:
            logger.warning("dropping %s: shorter than one frame", r.utterance_id)
            continue
        rel = f"wav/{r.speaker_id}/{r.utterance_id}.wav"
        write_wav(out_dir / rel, Waveform(w.samples[:n], rate))
        records.append(replace(r, path=rel, sample_rate=rate, n_samples=n))
    return Manifest(out_dir, records)


def write_manifest(m: Manifest, path: str | Path) -> None:
    """One JSON object per line, keys in fixed order; paths relative to the file's directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    lines = []
    for r in m.records:
        rel = r.path
        if m.root.resolve() != base:
            full = m.root.resolve() / r.path
            if not full.is_relative_to(base):
                raise ValueError(f"manifest {path} must live in a directory above its audio ({full})")
            rel = full.relative_to(base).as_posix()
        obj = {k: getattr(r, k) for k in MANIFEST_KEYS}
        obj["path"] = rel
        lines.append(json.dumps(obj, ensure_ascii=False))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if set(obj) != set(MANIFEST_KEYS):
                raise ValueError(f"{path}:{lineno}: expected keys {MANIFEST_KEYS}, got {sorted(obj)}")
            records.append(UtteranceRecord(**obj))
    return Manifest(path.parent, records)


@dataclass(frozen=True)
class SplitSpec:
    """Either explicit id lists per split or (train, val, test) fractions.

    With explicit lists, ids not listed anywhere go to ``train``.
    """

    lists: Mapping[str, Sequence[str]] | None = None
    fractions: tuple[float, float, float] | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> SplitSpec:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(lists={k: list(v) for k, v in data.items()})


def split_manifest(m: Manifest, spec: SplitSpec, seed: int = 0) -> Manifest:
    assignment: dict[str, str] = {}
    if spec.lists is not None:
        unknown = [s for s in spec.lists if s not in SPLITS]
        if unknown:
            raise ValueError(f"unknown split names: {unknown}")
        missing = sorted({u for ids in spec.lists.values() for u in ids if u not in m})
        if missing:
            raise ValueError(f"split lists reference ids absent from the manifest: {missing}")
        for split, ids in spec.lists.items():
            for u in ids:
                if u in assignment and assignment[u] != split:
                    raise ValueError(f"{u} listed in both {assignment[u]} and {split}")
                assignment[u] = split
    elif spec.fractions is not None:
        fr = np.asarray(spec.fractions, dtype=float)
        if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be 3 non-negative values summing to 1, got {spec.fractions}")
        ids = [r.utterance_id for r in m.records]
        order = np.random.default_rng(seed).permutation(len(ids))
        bounds = np.floor(np.cumsum(fr) * len(ids) + 1e-9).astype(int)
        for rank, idx in enumerate(order):
            split = SPLITS[int(np.searchsorted(bounds, rank, side="right"))] if rank < bounds[-1] else "train"
            assignment[ids[idx]] = split
    else:
        raise ValueError("split spec needs either lists or fractions")
    records = [replace(r, split=assignment.get(r.utterance_id, "train")) for r in m.records]
    return Manifest(m.root, records)


@dataclass
class SamplingStats:
    draws: int = 0
    fallbacks: int = 0


def sample_other_utterance(
    m: Manifest,
    speaker_id: str,
    exclude_id: str,
    rng: np.random.Generator,
    stats: SamplingStats | None = None,
) -> UtteranceRecord:
    """Uniformly pick another utterance of ``speaker_id``.

    A speaker with nothing but ``exclude_id`` yields the excluded record
    itself and counts a fallback.
    """
    if speaker_id not in m.speakers:
        raise ValueError(f"unknown speaker {speaker_id!r}")
    candidates = [u for u in m.speakers[speaker_id] if u != exclude_id]
    if stats is not None:
        stats.draws += 1
    if not candidates:
        if stats is not None:
            stats.fallbacks += 1
        return m[exclude_id]
    return m[candidates[int(rng.integers(len(candidates)))]]
