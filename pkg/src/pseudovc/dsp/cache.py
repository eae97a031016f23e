"""On-disk cache of perturbed variants, mirroring the manifest layout.

A variant lives at ``<root>/<method>/<record path without suffix>/<seed>.wav``;
its seed is derived from (global seed, utterance id, method, index).
"""

from __future__ import annotations

import hashlib
from pathlib import Path, PurePosixPath

from ..audio import write_wav
from ..corpus import Manifest, UtteranceRecord
from .perturb import perturb


def variant_seed(global_seed: int, utterance_id: str, method: str, index: int) -> int:
    digest = hashlib.sha256(f"{global_seed}:{utterance_id}:{method}:{index}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def variant_path(root: str | Path, record: UtteranceRecord, method: str, seed: int) -> Path:
    stem = PurePosixPath(record.path).with_suffix("")
    return Path(root) / method / stem / f"{seed}.wav"


def variant_paths(root, record: UtteranceRecord, method: str, n: int, global_seed: int = 0) -> list[Path]:
    return [variant_path(root, record, method, variant_seed(global_seed, record.utterance_id, method, k)) for k in range(n)]


def build_cache(m: Manifest, root: str | Path, method: str, n: int, global_seed: int = 0, overwrite: bool = False) -> int:
    """Write ``n`` variants per record; returns how many files were written."""
    written = 0
    for rec in m.records:
        w = None
        for k in range(n):
            seed = variant_seed(global_seed, rec.utterance_id, method, k)
            path = variant_path(root, rec, method, seed)
            if path.exists() and not overwrite:
                continue
            w = w if w is not None else m.load(rec)
            write_wav(path, perturb(w, method, seed))
            written += 1
    return written


def require_cache(m: Manifest, root: str | Path, method: str, n: int, global_seed: int = 0) -> dict[str, list[Path]]:
    """Variant paths per utterance id; raises if any file is missing."""
    out, missing = {}, []
    for rec in m.records:
        paths = variant_paths(root, rec, method, n, global_seed)
        missing += [p for p in paths if not p.is_file()]
        out[rec.utterance_id] = paths
    if missing:
        raise FileNotFoundError(
            f"{len(missing)} {method} variant(s) missing under {root} (first: {missing[0]}); "
            f"run `pseudovc prepare` with perturb.methods including {method!r}"
        )
    return out
