"""Teacher and student training loops.

Per batch item the content-encoder input is the source, a cached
perturbation of it, or one of its pseudo utterances; the speaker-encoder
input is, with probability ``alpha``, another utterance of the same
speaker. Posterior encoder, reconstruction target and discriminator real
samples always come from the original source.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .audio import Waveform, read_wav
from .config import TrainingConfig, config_hash
from .corpus import Manifest, SamplingStats, UtteranceRecord, sample_other_utterance
from .dsp.cache import require_cache
from .dsp.spectral import mel_torch
from .losses import LossBreakdown, assemble, generator_total, loss_adv, loss_fm, loss_kl, loss_recon
from .model import VCModel, align_frames, extract_content, read_checkpoint, save_checkpoint, speaker_embed
from .model.backends import mel_config
from .model.core import atomic_torch_save, target_spectrogram
from .pseudo import PseudoSet, sample_pseudo

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "rec", "kl", "adv_d", "adv_g", "fm", "total_g", "total_d", "speaker_sub_rate")


class NonFiniteLoss(FloatingPointError):
    pass


def training_hash(cfg: TrainingConfig) -> str:
    """Hash of everything that must match when resuming (step budget and logging excluded)."""
    return config_hash(replace(cfg, total_steps=0, log_every=0, checkpoint_every=0))


@dataclass(frozen=True)
class Selection:
    """Which audio feeds each encoder for one item."""

    content: Path
    speaker: UtteranceRecord
    substituted: bool


@dataclass(frozen=True)
class BatchItem:
    source_id: str
    content_input: Path
    speaker_input: Path
    target: Path
    crop_start_frame: int
    valid_frames: int
    segment_frames: int


def select_inputs(
    rec: UtteranceRecord,
    s: PseudoSet | None,
    cfg: TrainingConfig,
    m: Manifest,
    rng: np.random.Generator,
    pseudo_root: Path | None = None,
    variants: dict[str, list[Path]] | None = None,
    stats: SamplingStats | None = None,
) -> Selection:
    source_path = m.resolve(rec)
    content = source_path
    if cfg.perturbation == "pseudo":
        if s is not None and s.entries:
            content = Path(pseudo_root or ".") / sample_pseudo(s, rng).pseudo_path
    elif cfg.perturbation != "none":
        paths = (variants or {}).get(rec.utterance_id)
        if paths:
            content = paths[int(rng.integers(len(paths)))]
    alpha = cfg.alpha if cfg.speaker_sampling else 0.0
    r = rng.random()
    if r < alpha:
        other = sample_other_utterance(m, rec.speaker_id, rec.utterance_id, rng, stats)
        return Selection(content, other, other.utterance_id != rec.utterance_id)
    return Selection(content, rec, False)


def crop_segment(n_frames: int, segment_frames: int, rng: np.random.Generator) -> tuple[int, int]:
    """Random window start and the number of valid frames inside it."""
    if n_frames < 1:
        raise ValueError("grid must have at least one frame")
    if n_frames <= segment_frames:
        return 0, n_frames
    return int(rng.integers(n_frames - segment_frames + 1)), segment_frames


class FeatureStore:
    """Memoised waveforms and frozen-backend features keyed by file path."""

    def __init__(self, model: VCModel):
        self.model = model
        self._wave: dict[Path, Waveform] = {}
        self._content: dict[Path, np.ndarray] = {}
        self._lin: dict[Path, np.ndarray] = {}
        self._spk: dict[Path, np.ndarray] = {}

    def wave(self, path: Path) -> Waveform:
        if path not in self._wave:
            w = read_wav(path)
            n = (len(w) // self.model.hop) * self.model.hop
            self._wave[path] = w if n == len(w) else Waveform(w.samples[:n], w.rate)
        return self._wave[path]

    def content(self, path: Path) -> np.ndarray:
        if path not in self._content:
            self._content[path] = extract_content(self.wave(path), self.model.content)
        return self._content[path]

    def lin(self, path: Path) -> np.ndarray:
        if path not in self._lin:
            self._lin[path] = target_spectrogram(self.model, self.wave(path))
        return self._lin[path]

    def speaker(self, path: Path) -> np.ndarray:
        if path not in self._spk:
            self._spk[path] = speaker_embed(self.wave(path), self.model.speaker)
        return self._spk[path]


def collate(items: list[BatchItem], store: FeatureStore, dtype=torch.float32) -> dict[str, torch.Tensor]:
    """Stack cropped, zero-padded tensors; one window indexes content and target alike."""
    hop = store.model.hop
    seg = items[0].segment_frames
    B = len(items)
    d_c = store.model.cfg.d_content
    n_bins = store.model.stft.n_bins
    content = torch.zeros(B, d_c, seg, dtype=dtype)
    lin = torch.zeros(B, n_bins, seg, dtype=dtype)
    wav = torch.zeros(B, 1, seg * hop, dtype=dtype)
    mask = torch.zeros(B, 1, seg, dtype=dtype)
    g = torch.zeros(B, store.model.cfg.d_spk, dtype=dtype)
    for b, it in enumerate(items):
        s, n = it.crop_start_frame, it.valid_frames
        c = store.content(it.content_input)
        content[b, :, :n] = torch.from_numpy(c[s : s + n].T)
        lin[b, :, :n] = torch.from_numpy(store.lin(it.target)[s : s + n].T)
        wav[b, 0, : n * hop] = torch.from_numpy(store.wave(it.target).samples[s * hop : (s + n) * hop])
        mask[b, 0, :n] = 1.0
        g[b] = torch.from_numpy(store.speaker(it.speaker_input))
    return {"content": content, "lin": lin, "wav": wav, "mask": mask, "g": g}


def _set_requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


def generator_losses(model: VCModel, batch, weights, generator=None, noise=None):
    """Generator forward pass and its loss tensors (no optimiser side effects)."""
    y_hat, aux = model.net_g(batch["content"], batch["lin"], batch["g"], batch["mask"], generator=generator, noise=noise)
    wav_mask = batch["mask"].repeat_interleave(model.hop, dim=2)
    y_hat = y_hat * wav_mask
    mel_hat = mel_torch(y_hat[:, 0], model.stft, _mel_cfg(model))
    with torch.no_grad():
        # same framing as the prediction, so crop edges are treated alike
        mel = mel_torch(batch["wav"][:, 0], model.stft, _mel_cfg(model))
    rec = loss_recon(mel, mel_hat, batch["mask"])
    kl = loss_kl(aux["q"], aux["z"], aux["z_p"], aux["log_det"], aux["p"], batch["mask"])
    logits_real, feats_real = model.net_d(batch["wav"])
    logits_fake, feats_fake = model.net_d(y_hat)
    _, adv_g = loss_adv(None, logits_fake)
    fm = loss_fm(feats_real, feats_fake)
    total = generator_total(rec, kl, adv_g, fm, weights)
    return {"rec": rec, "kl": kl, "adv_g": adv_g, "fm": fm, "total_g": total, "y_hat": y_hat}


def _mel_cfg(model):
    return mel_config(model.audio)


class Trainer:
    """Owns the model, optimisers, RNG streams and metric log of one run."""

    def __init__(
        self,
        cfg: TrainingConfig,
        model: VCModel,
        manifest: Manifest,
        run_dir: str | Path,
        pseudo_sets: list[PseudoSet] | None = None,
        pseudo_root: str | Path | None = None,
        perturb_root: str | Path | None = None,
        n_variants: int = 0,
        perturb_seed: int = 0,
    ):
        manifest.require_nonempty("training")
        self.cfg = cfg
        self.model = model
        self.manifest = manifest
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.pseudo = {s.source_id: s for s in pseudo_sets or []}
        self.pseudo_root = Path(pseudo_root) if pseudo_root else None
        if cfg.perturbation == "pseudo" and cfg.n_pseudo > 0:
            missing = [r.utterance_id for r in manifest.records if len(self.pseudo.get(r.utterance_id, ())) != cfg.n_pseudo]
            if missing:
                raise ValueError(f"pseudo manifest does not provide {cfg.n_pseudo} entries for: {missing[:10]}")
        self.variants = None
        if cfg.perturbation in ("vtlp", "nansy", "sr"):
            if perturb_root is None:
                raise FileNotFoundError(f"perturbation {cfg.perturbation!r} needs a perturbation cache; run `pseudovc prepare`")
            self.variants = require_cache(manifest, perturb_root, cfg.perturbation, n_variants, perturb_seed)
        self.store = FeatureStore(model)
        self.rng = np.random.default_rng(cfg.seed)
        self.noise_gen = torch.Generator().manual_seed(cfg.seed)
        self.stats = SamplingStats()
        self.selections = 0
        self.substitutions = 0
        self.step = 0
        g, d = model.net_g, model.net_d
        self.optim_g = torch.optim.AdamW(g.parameters(), cfg.lr, betas=cfg.betas, eps=cfg.eps)
        self.optim_d = torch.optim.AdamW(d.parameters(), cfg.lr, betas=cfg.betas, eps=cfg.eps)
        self.sched_g = torch.optim.lr_scheduler.ExponentialLR(self.optim_g, gamma=cfg.lr_decay)
        self.sched_d = torch.optim.lr_scheduler.ExponentialLR(self.optim_d, gamma=cfg.lr_decay)
        self.metrics_path = self.run_dir / "metrics.csv"
        self.history: list[LossBreakdown] = []

    # -- batches -----------------------------------------------------------

    def draw_batch(self) -> list[BatchItem]:
        recs = self.manifest.records
        replace_ = len(recs) < self.cfg.batch_size
        idx = self.rng.choice(len(recs), size=self.cfg.batch_size, replace=replace_)
        items = []
        for i in idx:
            rec = recs[int(i)]
            sel = select_inputs(rec, self.pseudo.get(rec.utterance_id), self.cfg, self.manifest, self.rng, self.pseudo_root, self.variants, self.stats)
            self.selections += 1
            self.substitutions += int(sel.substituted)
            target = self.manifest.resolve(rec)
            n_target = self.store.lin(target).shape[0]
            n = align_frames(self.store.content(sel.content), n_target).shape[0]
            start, valid = crop_segment(n, self.cfg.segment_frames, self.rng)
            items.append(BatchItem(rec.utterance_id, sel.content, self.manifest.resolve(sel.speaker), target, start, valid, self.cfg.segment_frames))
        return items

    # -- optimisation --------------------------------------------------------

    def training_step(self, batch: dict[str, torch.Tensor]) -> LossBreakdown:
        """One discriminator update then one generator update on the same batch."""
        model, w = self.model, self.cfg.loss_weights
        model.net_g.train()
        model.net_d.train()

        _set_requires_grad(model.net_d, False)
        out = generator_losses(model, batch, w, generator=self.noise_gen)
        _set_requires_grad(model.net_d, True)

        logits_real, _ = model.net_d(batch["wav"])
        logits_fake, _ = model.net_d(out["y_hat"].detach())
        adv_d, _ = loss_adv(logits_real, logits_fake)
        self._check_finite(batch, adv_d=adv_d, **{k: out[k] for k in ("rec", "kl", "adv_g", "fm")})
        self.optim_d.zero_grad(set_to_none=True)
        adv_d.backward()
        self.optim_d.step()

        self.optim_g.zero_grad(set_to_none=True)
        out["total_g"].backward()
        self.optim_g.step()
        model.net_d.zero_grad(set_to_none=True)

        self.sched_g.step()
        self.sched_d.step()
        self.step += 1
        return assemble(out["rec"], out["kl"], adv_d, out["adv_g"], out["fm"], w)

    def _check_finite(self, batch, **terms):
        bad = [k for k, v in terms.items() if not torch.isfinite(v).all()]
        if bad:
            path = self.run_dir / f"nonfinite_step{self.step + 1}.pt"
            atomic_torch_save({k: v for k, v in batch.items()}, path)
            raise NonFiniteLoss(f"non-finite loss term(s) {bad} at step {self.step + 1}; batch saved to {path}")

    @property
    def speaker_sub_rate(self) -> float:
        return self.substitutions / self.selections if self.selections else 0.0

    def _log(self, lb: LossBreakdown):
        new = not self.metrics_path.exists()
        with open(self.metrics_path, "a", newline="") as f:
            wr = csv.writer(f)
            if new:
                wr.writerow(METRIC_COLUMNS)
            wr.writerow([self.step] + [f"{v:.6g}" for v in lb.as_row()] + [f"{self.speaker_sub_rate:.6g}"])

    def run(self, steps: int | None = None, checkpoint_path: str | Path | None = None) -> list[LossBreakdown]:
        """Train until ``cfg.total_steps`` (or ``steps`` more); returns this call's breakdowns."""
        end = self.cfg.total_steps if steps is None else self.step + steps
        trace = []
        while self.step < end:
            batch = collate(self.draw_batch(), self.store)
            lb = self.training_step(batch)
            trace.append(lb)
            self.history.append(lb)
            if self.cfg.log_every and self.step % self.cfg.log_every == 0:
                self._log(lb)
            if checkpoint_path and self.cfg.checkpoint_every and self.step % self.cfg.checkpoint_every == 0:
                self.save(checkpoint_path)
        if checkpoint_path:
            self.save(checkpoint_path)
        return trace

    # -- checkpoints ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        extra = {
            "training_config": json.loads(json.dumps(_plain(self.cfg))),
            "optim_g": self.optim_g.state_dict(),
            "optim_d": self.optim_d.state_dict(),
            "sched_g": self.sched_g.state_dict(),
            "sched_d": self.sched_d.state_dict(),
            "rng": self.rng.bit_generator.state,
            "noise_rng": self.noise_gen.get_state(),
            "counters": {
                "selections": self.selections,
                "substitutions": self.substitutions,
                "draws": self.stats.draws,
                "fallbacks": self.stats.fallbacks,
            },
        }
        save_checkpoint(path, self.model, self.step, training_hash(self.cfg), extra)

    def resume(self, path: str | Path) -> None:
        payload = read_checkpoint(path, expect_training_hash=training_hash(self.cfg))
        self.model.net_g.load_state_dict(payload["net_g"])
        self.model.net_d.load_state_dict(payload["net_d"])
        self.optim_g.load_state_dict(payload["optim_g"])
        self.optim_d.load_state_dict(payload["optim_d"])
        self.sched_g.load_state_dict(payload["sched_g"])
        self.sched_d.load_state_dict(payload["sched_d"])
        self.rng.bit_generator.state = payload["rng"]
        self.noise_gen.set_state(payload["noise_rng"])
        c = payload["counters"]
        self.selections, self.substitutions = c["selections"], c["substitutions"]
        self.stats = SamplingStats(c["draws"], c["fallbacks"])
        self.step = payload["step"]


def _plain(cfg):
    from .config import to_dict

    return to_dict(cfg)


def trace_digest(trace: list[LossBreakdown]) -> str:
    h = hashlib.sha256()
    for lb in trace:
        h.update(np.asarray(lb.as_row(), dtype=np.float64).tobytes())
    return h.hexdigest()


def train_teacher(cfg: TrainingConfig, model: VCModel, manifest: Manifest, run_dir, perturb_root=None, n_variants=0, perturb_seed=0) -> Path:
    """Baseline protocol: source or cached perturbation into the content encoder."""
    if cfg.perturbation == "pseudo":
        raise ValueError("teacher training cannot use pseudo inputs")
    trainer = Trainer(cfg, model, manifest, run_dir, perturb_root=perturb_root, n_variants=n_variants, perturb_seed=perturb_seed)
    path = Path(run_dir) / "checkpoint.pt"
    trainer.run(checkpoint_path=path)
    return path


def train_pseudovc(cfg: TrainingConfig, model: VCModel, manifest: Manifest, pseudo_sets: list[PseudoSet], pseudo_root, run_dir, resume: str | Path | None = None) -> Path:
    """Student protocol: pseudo utterances into the content encoder plus speaker sampling."""
    if cfg.perturbation != "pseudo":
        raise ValueError("student training expects perturbation = 'pseudo'")
    trainer = Trainer(cfg, model, manifest, run_dir, pseudo_sets=pseudo_sets, pseudo_root=pseudo_root)
    if resume:
        trainer.resume(resume)
    path = Path(run_dir) / "checkpoint.pt"
    trainer.run(checkpoint_path=path)
    logger.info("speaker sampling substituted %d of %d selections", trainer.substitutions, trainer.selections)
    return path
