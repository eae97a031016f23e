"""``pseudovc`` command line: one subcommand per pipeline stage.

Each stage writes into ``<workdir>/<stage>-<confighash>-<timestamp>/``
together with the resolved config, and records that directory in
``<workdir>/latest/<stage>`` so later stages can find their inputs.
Failures print a single JSON line on stderr; a missing prerequisite
exits with status 2, any other error with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from .audio import Waveform, read_wav, resample, write_wav
from .config import Config, ConfigError, config_hash, dump_config, load_config
from .corpus import Layout, SplitSpec, ingest_corpus, prepare_corpus, read_manifest, split_manifest, write_manifest

logger = logging.getLogger("pseudovc")

STAGES = ("prepare", "train-teacher", "gen-pseudo", "train", "convert", "eval", "tsne")


class MissingPrerequisite(Exception):
    def __init__(self, path, hint: str = ""):
        self.path = str(path)
        super().__init__(f"missing prerequisite: {path}" + (f" ({hint})" if hint else ""))


def _require(path: Path, hint: str = "") -> Path:
    if not Path(path).exists():
        raise MissingPrerequisite(path, hint)
    return Path(path)


class Workspace:
    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.root = Path(cfg.workdir)

    def new_run(self, stage: str) -> Path:
        stamp = time.strftime("%Y%m%dT%H%M%S") + f"{time.time_ns() % 1_000_000_000:09d}"[:6]
        run = self.root / f"{stage}-{config_hash(self.cfg)[:10]}-{stamp}"
        run.mkdir(parents=True, exist_ok=False)
        dump_config(self.cfg, run / "config.yaml")
        return run

    def publish(self, stage: str, run: Path) -> None:
        latest = self.root / "latest"
        latest.mkdir(parents=True, exist_ok=True)
        (latest / stage).write_text(str(run.resolve()) + "\n", encoding="utf-8")

    def latest(self, stage: str) -> Path:
        pointer = self.root / "latest" / stage
        if not pointer.is_file():
            raise MissingPrerequisite(pointer, f"run `pseudovc {stage}` first")
        return _require(Path(pointer.read_text(encoding="utf-8").strip()))


# -- stages ------------------------------------------------------------------


def _model(cfg: Config, seed: int):
    from .model import VCModel

    return VCModel(cfg.model, cfg.audio, seed=seed)


def _load_transcripts(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, text = line.partition("\t")
            out[key] = text
    return out


def cmd_prepare(cfg: Config, ws: Workspace, args) -> Path:
    from .dsp.cache import build_cache

    c = cfg.corpus
    root = _require(Path(c.root), "set corpus.root") if c.root else None
    if root is None:
        raise MissingPrerequisite("corpus.root", "no corpus root configured")
    layout = Layout(c.layout, c.pattern, c.metadata or None)
    m = ingest_corpus(root, layout)
    m.require_nonempty("preparation")
    spec = SplitSpec.from_file(_require(Path(c.split_file))) if c.split_file else SplitSpec(fractions=tuple(c.split_fractions))
    m = split_manifest(m, spec, seed=cfg.seed)
    run = ws.new_run("prepare")
    prepared = prepare_corpus(m, run, cfg.audio.sample_rate, cfg.audio.hop, c.peak)
    write_manifest(prepared, run / "manifest.jsonl")
    train = prepared.subset("train")
    for method in cfg.perturb.methods:
        build_cache(train, run / "perturb", method, cfg.perturb.n_variants, cfg.seed)
    transcripts = Path(c.transcripts) if c.transcripts else root / "transcripts.tsv"
    if transcripts.is_file():
        shutil.copyfile(transcripts, run / "transcripts.tsv")
    logger.info("prepared %d utterances (%d skipped) into %s", len(prepared), len(m.skipped), run)
    return run


def _prepared(ws: Workspace):
    prep = ws.latest("prepare")
    return prep, read_manifest(_require(prep / "manifest.jsonl"))


def cmd_train_teacher(cfg: Config, ws: Workspace, args) -> Path:
    from .trainer import Trainer

    prep, m = _prepared(ws)
    train = m.subset("train")
    perturb_root = prep / "perturb"
    if cfg.teacher.perturbation != "none":
        _require(perturb_root / cfg.teacher.perturbation, "run `pseudovc prepare` with perturb.methods including it")
    run = ws.new_run("train-teacher")
    model = _model(cfg, cfg.teacher.seed)
    trainer = Trainer(cfg.teacher, model, train, run, perturb_root=perturb_root, n_variants=cfg.perturb.n_variants, perturb_seed=cfg.seed)
    trainer.run(checkpoint_path=run / "checkpoint.pt")
    return run


def _teacher_checkpoint(cfg: Config, ws: Workspace) -> Path:
    if cfg.pseudo.teacher_checkpoint:
        return _require(Path(cfg.pseudo.teacher_checkpoint))
    return _require(ws.latest("train-teacher") / "checkpoint.pt")


def cmd_gen_pseudo(cfg: Config, ws: Workspace, args) -> Path:
    from .pseudo import TeacherHandle, generate_all, write_pseudo_manifest

    prep, m = _prepared(ws)
    ckpt = _teacher_checkpoint(cfg, ws)
    teacher = TeacherHandle.load(ckpt)
    sources = m.subset(cfg.pseudo.split)
    sources.require_nonempty("pseudo generation")
    run = ws.new_run("gen-pseudo")
    sets = generate_all(teacher, sources, m.subset("train"), cfg.train.n_pseudo, run, cfg.seed, cfg.pseudo.workers)
    write_pseudo_manifest(sets, run / "pseudo.jsonl")
    return run


def cmd_train(cfg: Config, ws: Workspace, args) -> Path:
    from .pseudo import read_pseudo_manifest
    from .trainer import Trainer

    prep, m = _prepared(ws)
    train = m.subset("train")
    sets, pseudo_root = None, None
    t = cfg.train
    if t.perturbation == "pseudo" and t.n_pseudo > 0:
        pseudo_root = ws.latest("gen-pseudo")
        sets = read_pseudo_manifest(_require(pseudo_root / "pseudo.jsonl"), n_expected=t.n_pseudo)
    run = ws.new_run("train")
    model = _model(cfg, t.seed)
    trainer = Trainer(
        t, model, train, run, pseudo_sets=sets, pseudo_root=pseudo_root,
        perturb_root=prep / "perturb", n_variants=cfg.perturb.n_variants, perturb_seed=cfg.seed,
    )
    if getattr(args, "resume", None):
        trainer.resume(_require(Path(args.resume)))
    trainer.run(checkpoint_path=run / "checkpoint.pt")
    return run


def _student_checkpoint(explicit: str, ws: Workspace) -> Path:
    if explicit:
        return _require(Path(explicit))
    return _require(ws.latest("train") / "checkpoint.pt")


def _read_input(path: Path, rate: int) -> Waveform:
    return resample(read_wav(_require(path)), rate)


def cmd_convert(cfg: Config, ws: Workspace, args) -> Path:
    from .model import convert, load_model

    ckpt = _student_checkpoint(args.checkpoint or cfg.eval.checkpoint, ws)
    src = _read_input(Path(args.source), cfg.audio.sample_rate)
    ref = _read_input(Path(args.reference), cfg.audio.sample_rate)
    model, _ = load_model(ckpt)
    y = convert(model.eval(), src, ref)
    out = Path(args.output)
    write_wav(out, y)
    logger.info("wrote %s (%d samples)", out, len(y))
    return out


def cmd_eval(cfg: Config, ws: Workspace, args) -> Path:
    from .asr import make_client
    from .evaluation import build_eval_set, evaluate, pick_targets, write_report
    from .model import load_model

    prep, m = _prepared(ws)
    ckpt = _student_checkpoint(cfg.eval.checkpoint, ws)
    # reference text for WER, whichever recogniser produces the hypotheses
    transcripts = _load_transcripts(_require(prep / "transcripts.tsv", "set corpus.transcripts and re-run prepare"))
    e = cfg.eval
    pool = m.subset(e.split)
    pool.require_nonempty("evaluation")
    rng = np.random.default_rng(cfg.seed)
    targets = list(e.target_speakers) or pick_targets(pool, e.n_targets, rng)
    pairs = build_eval_set(pool, e.n_sources, targets, rng)
    client = make_client(e.asr, transcripts)
    model, _ = load_model(ckpt)
    run = ws.new_run("eval")
    report = evaluate(
        model.eval(), pool, pairs, run, client, transcripts,
        retries=e.asr.retries, max_concurrency=e.asr.max_concurrency, n_bootstrap=e.bootstrap, seed=cfg.seed,
    )
    report.config_hash = config_hash(cfg)
    write_report(report, run)
    logger.info("SECS %.4f, WER %.4f over %d pairs", report.secs_mean, report.wer, len(report.pairs))
    return run


def cmd_tsne(cfg: Config, ws: Workspace, args) -> Path:
    from .dsp.cache import variant_paths
    from .evaluation import project_embeddings, write_diversity, write_projection
    from .model import speaker_backend, speaker_embed
    from .pseudo import read_pseudo_manifest

    prep, m = _prepared(ws)
    train = m.subset("train")
    train.require_nonempty("projection")
    source = train[cfg.tsne.source_id] if cfg.tsne.source_id else train.records[0]
    spk = speaker_backend(cfg.model, cfg.audio)
    groups: dict[str, list[np.ndarray]] = {}
    rng = np.random.default_rng(cfg.tsne.seed)
    others = [r for r in train.records if r.utterance_id != source.utterance_id]
    pick = rng.choice(len(others), size=min(cfg.tsne.n_real, len(others)), replace=False) if others else []
    groups["real"] = [speaker_embed(train.load(others[int(i)]), spk) for i in pick]
    for method in cfg.perturb.methods:
        paths = [p for p in variant_paths(prep / "perturb", source, method, cfg.perturb.n_variants, cfg.seed) if p.is_file()]
        if paths:
            groups[method] = [speaker_embed(read_wav(p), spk) for p in paths]
    pointer = ws.root / "latest" / "gen-pseudo"
    if pointer.is_file():
        root = ws.latest("gen-pseudo")
        for s in read_pseudo_manifest(root / "pseudo.jsonl", root=root):
            if s.source_id == source.utterance_id:
                groups["pseudo"] = [speaker_embed(read_wav(root / e.pseudo_path), spk) for e in s.entries]
    groups = {k: v for k, v in groups.items() if v}
    labels = [k for k, v in groups.items() for _ in v]
    emb = np.stack([e for v in groups.values() for e in v])
    points = project_embeddings(emb, cfg.tsne.seed, cfg.tsne.perplexity, cfg.tsne.n_iter)
    run = ws.new_run("tsne")
    write_projection(points, labels, run, title=f"speaker embeddings around {source.utterance_id}")
    write_diversity(groups, run / "diversity.tsv")
    return run


COMMANDS = {
    "prepare": cmd_prepare,
    "train-teacher": cmd_train_teacher,
    "gen-pseudo": cmd_gen_pseudo,
    "train": cmd_train,
    "convert": cmd_convert,
    "eval": cmd_eval,
    "tsne": cmd_tsne,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--profile", choices=("toy", "paper"))
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="pseudovc", description="One-shot voice conversion with pseudo paired data.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, parents=[common])
        if name == "convert":
            p.add_argument("--source", required=True)
            p.add_argument("--reference", required=True)
            p.add_argument("--output", required=True)
            p.add_argument("--checkpoint", default="")
        if name == "train":
            p.add_argument("--resume", default="", help="checkpoint to continue from")
    return ap


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.profile, args.seed)
    except ConfigError as exc:
        return _fail(1, "config", str(exc), problems=exc.problems)
    except (OSError, ValueError) as exc:
        return _fail(1, "config", str(exc))
    ws = Workspace(cfg)
    try:
        out = COMMANDS[args.command](cfg, ws, args)
    except MissingPrerequisite as exc:
        return _fail(2, "missing_prerequisite", str(exc), path=exc.path)
    except Exception as exc:  # noqa: BLE001 - reported as one machine-readable line
        logger.debug("stage failed", exc_info=True)
        return _fail(1, type(exc).__name__, str(exc))
    if args.command != "convert":
        ws.publish(args.command, out)
    print(str(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
