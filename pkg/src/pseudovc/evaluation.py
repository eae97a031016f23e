"""Objective evaluation: pair construction, SECS, WER, projections and reports."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .asr import NORMALIZATION, normalize_text, transcribe
from .audio import Waveform, write_wav
from .corpus import Manifest
from .model import VCModel, convert, speaker_embed

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("source_id", "target_speaker", "secs", "wer_contribution")


@dataclass(frozen=True)
class EvalPair:
    source_id: str
    target_speaker_id: str
    reference_id: str
    converted_path: str = ""


@dataclass
class EvalReport:
    pairs: list[EvalPair]
    secs: list[float]
    edits: list[int | None]
    ref_tokens: list[int]
    secs_ci: tuple[float, float] = (math.nan, math.nan)
    asr_failed: list[str] = field(default_factory=list)
    config_hash: str = ""

    @property
    def secs_mean(self) -> float:
        return float(np.mean(self.secs))

    @property
    def wer(self) -> float:
        """Corpus-level: total edits over total reference words of scored pairs."""
        n = sum(r for e, r in zip(self.edits, self.ref_tokens) if e is not None)
        if n == 0:
            return math.nan
        return sum(e for e in self.edits if e is not None) / n

    def wer_contributions(self) -> list[float]:
        n = sum(r for e, r in zip(self.edits, self.ref_tokens) if e is not None)
        return [math.nan if e is None or n == 0 else e / n for e in self.edits]


def build_eval_set(m: Manifest, n_sources: int, target_speakers, rng: np.random.Generator) -> list[EvalPair]:
    """``n_sources`` x ``len(target_speakers)`` pairs, sources drawn from non-target speakers."""
    target_speakers = list(target_speakers)
    if not target_speakers:
        raise ValueError("at least one target speaker is required")
    unknown = [s for s in target_speakers if s not in m.speakers]
    if unknown:
        raise ValueError(f"unknown target speakers: {unknown}")
    refs = {}
    for spk in target_speakers:
        utts = m.speakers[spk]
        refs[spk] = utts[int(rng.integers(len(utts)))]
    excluded = set(target_speakers)
    candidates = [r.utterance_id for r in m.records if r.speaker_id not in excluded]
    if len(candidates) < n_sources:
        raise ValueError(f"need {n_sources} source utterances outside the target speakers, found {len(candidates)}")
    chosen = [candidates[i] for i in sorted(rng.choice(len(candidates), size=n_sources, replace=False))]
    return [EvalPair(s, t, refs[t]) for s in chosen for t in target_speakers]


def pick_targets(m: Manifest, n_targets: int, rng: np.random.Generator) -> list[str]:
    speakers = sorted(m.speakers)
    if n_targets >= len(speakers):
        raise ValueError(f"{n_targets} target speakers leave no source speakers among {len(speakers)}")
    return sorted(speakers[i] for i in rng.choice(len(speakers), size=n_targets, replace=False))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return min(1.0, max(-1.0, c))


def secs(a: Waveform, b: Waveform, backend) -> float:
    """Speaker-encoder cosine similarity."""
    return cosine(speaker_embed(a, backend), speaker_embed(b, backend))


def edit_distance(hyp, ref) -> int:
    """Word-level Levenshtein distance (two-row dynamic programme)."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def wer(hyps, refs) -> float:
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses for {len(refs)} references")
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ValueError("reference corpus has no words")
    return sum(edit_distance(h, r) for h, r in zip(hyps, refs)) / total


def bootstrap_ci(values, n_resamples: int = 1000, rng: np.random.Generator | None = None, level: float = 0.95):
    """Percentile bootstrap interval of the mean."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no values")
    rng = rng or np.random.default_rng(0)
    means = x[rng.integers(0, x.size, size=(n_resamples, x.size))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def diversity(embeddings) -> float:
    """Mean pairwise Euclidean distance; 0 for fewer than two embeddings."""
    e = np.asarray(embeddings, dtype=np.float64)
    return float(pdist(e).mean()) if len(e) > 1 else 0.0


def project_embeddings(embeddings, seed: int = 0, perplexity: float = 30.0, n_iter: int = 1000) -> np.ndarray:
    """Deterministic 2-D t-SNE; perplexity is clamped for small sets."""
    from sklearn.manifold import TSNE

    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("need at least two embeddings to project")
    perp = min(perplexity, max((len(x) - 1) / 3, 1e-3))
    tsne = TSNE(n_components=2, perplexity=perp, max_iter=n_iter, init="pca", random_state=seed, method="exact")
    return tsne.fit_transform(x)


def evaluate(
    model: VCModel,
    m: Manifest,
    pairs: list[EvalPair],
    out_dir: str | Path,
    asr_client,
    transcripts: dict[str, str],
    retries: int = 3,
    max_concurrency: int = 1,
    n_bootstrap: int = 1000,
    seed: int = 0,
    sleep=None,
) -> EvalReport:
    """Convert every pair, then score speaker similarity and intelligibility."""
    missing = sorted({p.source_id for p in pairs} - set(transcripts))
    if missing:
        raise ValueError(f"no reference transcript for {missing[:10]}")
    out_dir = Path(out_dir)
    cache: dict[str, Waveform] = {}

    def load(uid):
        if uid not in cache:
            cache[uid] = m.load(uid)
        return cache[uid]

    done, scores, batch = [], [], []
    for p in pairs:
        ref = load(p.reference_id)
        y = convert(model, load(p.source_id), ref)
        rel = f"converted/{p.target_speaker_id}/{p.source_id}.wav"
        write_wav(out_dir / rel, y)
        done.append(replace(p, converted_path=rel))
        scores.append(secs(y, ref, model.speaker))
        batch.append((p.source_id, y))
    kw = {} if sleep is None else {"sleep": sleep}
    result = transcribe(batch, asr_client, retries=retries, max_concurrency=max_concurrency, **kw)
    refs = [normalize_text(transcripts[p.source_id]) for p in done]
    edits = [None if h is None else edit_distance(h, r) for h, r in zip(result.tokens, refs)]
    ci = bootstrap_ci(scores, n_bootstrap, np.random.default_rng(seed))
    failed = [f"{p.source_id}->{p.target_speaker_id}" for p, t in zip(done, result.tokens) if t is None]
    return EvalReport(done, scores, edits, [len(r) for r in refs], ci, failed)


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for p, s, c in zip(report.pairs, report.secs, report.wer_contributions()):
            w.writerow([p.source_id, p.target_speaker_id, f"{s:.6f}", "" if math.isnan(c) else f"{c:.6f}"])
    lo, hi = report.secs_ci
    lines = [
        f"pairs: {len(report.pairs)}",
        f"SECS mean: {report.secs_mean:.4f} (95% bootstrap CI {lo:.4f} .. {hi:.4f})",
        f"WER (corpus-level): {report.wer:.4f}",
        f"ASR failures excluded from WER: {len(report.asr_failed)}",
        f"text normalization: {NORMALIZATION}",
    ]
    if report.config_hash:
        lines.append(f"config hash: {report.config_hash}")
    if report.asr_failed:
        lines.append("failed pairs: " + ", ".join(report.asr_failed))
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_projection(points: np.ndarray, labels, out_dir: str | Path, title: str = "speaker embeddings") -> None:
    """``coords.tsv`` plus a scatter plot grouped by label."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = list(labels)
    with open(out_dir / "coords.tsv", "w", encoding="utf-8") as f:
        f.write("label\tx\ty\n")
        for lab, (x, y) in zip(labels, points):
            f.write(f"{lab}\t{x:.6f}\t{y:.6f}\n")
    fig, ax = plt.subplots(figsize=(5, 5))
    for lab in dict.fromkeys(labels):
        idx = [i for i, l in enumerate(labels) if l == lab]
        ax.scatter(points[idx, 0], points[idx, 1], s=14, label=lab)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "scatter.png", dpi=120)
    plt.close(fig)


def write_diversity(groups: dict[str, list[np.ndarray]], path: str | Path) -> dict[str, float]:
    values = {k: diversity(v) for k, v in groups.items()}
    with open(path, "w", encoding="utf-8") as f:
        f.write("method\tn\tmean_pairwise_distance\n")
        for k, v in values.items():
            f.write(f"{k}\t{len(groups[k])}\t{v:.6f}\n")
    return values
