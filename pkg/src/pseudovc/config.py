"""Typed configuration, profile defaults and validated loading.

Configuration files are YAML. Keys are nested by section (``model``,
``train``, ``teacher``, ...) and every key must be known; all problems
found while loading are reported in one :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, get_args, get_origin, get_type_hints

import yaml

PROFILES = ("toy", "paper")
PERTURBATIONS = ("none", "vtlp", "nansy", "sr", "pseudo")

# values fixed by the reference training setup
PAPER_TRAINING = {"batch_size": 64, "segment_frames": 128, "total_steps": 200_000, "n_pseudo": 25}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


@dataclass(frozen=True)
class LossWeights:
    """Generator loss weights; the adversarial term has weight 1. Values follow the usual VITS/FreeVC convention."""

    rec: float = 45.0
    kl: float = 1.0
    fm: float = 2.0

    def validate(self):
        return [f"loss weight {f.name} must be >= 0" for f in fields(self) if getattr(self, f.name) < 0]


@dataclass(frozen=True)
class ModelConfig:
    profile: str = "toy"
    d_content: int = 64
    d_z: int = 16
    d_spk: int = 32
    hidden: int = 32
    wn_kernel: int = 5
    enc_p_layers: int = 3
    enc_q_layers: int = 3
    flow_depth: int = 4
    flow_wn_layers: int = 2
    flow_mean_only: bool = True
    hop: int = 320
    upsample_rates: tuple[int, ...] = (8, 8, 5)
    upsample_kernel_sizes: tuple[int, ...] = (16, 16, 11)
    upsample_initial_channel: int = 128
    resblock_kernel_sizes: tuple[int, ...] = (3,)
    resblock_dilation_sizes: tuple[tuple[int, ...], ...] = ((1, 3),)
    mpd_periods: tuple[int, ...] = (2, 3)
    msd_scales: int = 1
    disc_channels: int = 16
    disc_max_channels: int = 64
    content_backend: str = "toy"
    content_model: str = "microsoft/wavlm-large"
    content_layer: int = 24
    speaker_backend: str = "toy"
    backend_seed: int = 1234

    def validate(self):
        problems = []
        if math.prod(self.upsample_rates) != self.hop:
            problems.append(f"product of upsample_rates {self.upsample_rates} must equal hop {self.hop}")
        if len(self.upsample_rates) != len(self.upsample_kernel_sizes):
            problems.append("upsample_rates and upsample_kernel_sizes differ in length")
        for u, k in zip(self.upsample_rates, self.upsample_kernel_sizes):
            if (k - u) % 2:
                problems.append(f"upsample kernel {k} and rate {u} must differ by an even number")
        if len(self.resblock_kernel_sizes) != len(self.resblock_dilation_sizes):
            problems.append("resblock_kernel_sizes and resblock_dilation_sizes differ in length")
        if self.d_z % 2:
            problems.append("d_z must be even for coupling layers")
        if self.upsample_initial_channel % 2 ** len(self.upsample_rates):
            problems.append("upsample_initial_channel must be divisible by 2**len(upsample_rates)")
        if self.content_backend not in ("toy", "wavlm"):
            problems.append(f"unknown content_backend {self.content_backend!r}")
        if self.speaker_backend not in ("toy", "resemblyzer"):
            problems.append(f"unknown speaker_backend {self.speaker_backend!r}")
        return problems


@dataclass(frozen=True)
class TrainingConfig:
    profile: str = "toy"
    alpha: float = 0.01
    n_pseudo: int = 25
    batch_size: int = 4
    segment_frames: int = 32
    total_steps: int = 500
    lr: float = 2e-4
    betas: tuple[float, float] = (0.8, 0.99)
    eps: float = 1e-9
    lr_decay: float = 0.999875
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    perturbation: str = "pseudo"
    speaker_sampling: bool = True
    log_every: int = 1
    checkpoint_every: int = 0

    def validate(self):
        problems = []
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"alpha must be in [0, 1], got {self.alpha}")
        if self.n_pseudo < 0:
            problems.append(f"n_pseudo must be >= 0, got {self.n_pseudo}")
        if self.segment_frames < 1:
            problems.append("segment_frames must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.total_steps < 0:
            problems.append("total_steps must be >= 0")
        if self.perturbation not in PERTURBATIONS:
            problems.append(f"perturbation must be one of {PERTURBATIONS}, got {self.perturbation!r}")
        if self.profile == "paper":
            for key, value in PAPER_TRAINING.items():
                if getattr(self, key) != value:
                    problems.append(f"paper profile fixes {key} = {value}, got {getattr(self, key)}")
        problems += self.loss_weights.validate()
        return problems


@dataclass(frozen=True)
class CorpusConfig:
    root: str = ""
    layout: str = "speaker_dirs"
    pattern: str = "*.wav"
    metadata: str = ""
    split_file: str = ""
    split_fractions: tuple[float, float, float] = (0.9, 0.05, 0.05)
    transcripts: str = ""
    peak: float = 0.95


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 16000
    n_fft: int = 1280
    hop: int = 320
    win: int = 1280
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0


@dataclass(frozen=True)
class PerturbConfig:
    methods: tuple[str, ...] = ()
    n_variants: int = 25


@dataclass(frozen=True)
class PseudoConfig:
    teacher_checkpoint: str = ""
    workers: int = 1
    split: str = "train"


@dataclass(frozen=True)
class AsrConfig:
    kind: str = "mock"
    endpoint: str = ""
    timeout: float = 30.0
    retries: int = 3
    max_concurrency: int = 4


@dataclass(frozen=True)
class EvalConfig:
    checkpoint: str = ""
    split: str = "test"
    n_sources: int = 400
    n_targets: int = 12
    target_speakers: tuple[str, ...] = ()
    bootstrap: int = 1000
    asr: AsrConfig = field(default_factory=AsrConfig)


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    seed: int = 0
    source_id: str = ""
    n_real: int = 25


@dataclass(frozen=True)
class Config:
    profile: str = "toy"
    seed: int = 0
    workdir: str = "runs"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    teacher: TrainingConfig = field(default_factory=TrainingConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    pseudo: PseudoConfig = field(default_factory=PseudoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)

    def validate(self):
        problems = []
        if self.profile not in PROFILES:
            problems.append(f"profile must be one of {PROFILES}, got {self.profile!r}")
        problems += [f"model: {p}" for p in self.model.validate()]
        problems += [f"teacher: {p}" for p in self.teacher.validate()]
        problems += [f"train: {p}" for p in self.train.validate()]
        if self.teacher.perturbation == "pseudo":
            problems.append("teacher: perturbation must not be 'pseudo'")
        if self.model.hop != self.audio.hop:
            problems.append(f"model.hop {self.model.hop} differs from audio.hop {self.audio.hop}")
        for m in self.perturb.methods:
            if m not in ("vtlp", "nansy", "sr"):
                problems.append(f"perturb: unknown method {m!r}")
        if self.perturb.n_variants < 1:
            problems.append("perturb: n_variants must be >= 1")
        if self.eval.asr.kind not in ("mock", "http", "whisper"):
            problems.append(f"eval.asr: unknown kind {self.eval.asr.kind!r}")
        return problems


TOY_DEFAULTS: dict[str, Any] = {
    "corpus": {"split_fractions": [0.75, 0.0, 0.25]},
    "perturb": {"methods": ["sr"], "n_variants": 5},
    "teacher": {"perturbation": "sr", "speaker_sampling": False, "lr": 2e-3, "total_steps": 300},
    "train": {"perturbation": "pseudo", "n_pseudo": 5, "lr": 2e-3, "total_steps": 300},
    "eval": {"split": "all", "n_sources": 4, "n_targets": 2, "bootstrap": 200},
    "tsne": {"n_real": 8},
}

PAPER_DEFAULTS: dict[str, Any] = {
    "model": {
        "profile": "paper",
        "d_content": 1024,
        "d_z": 192,
        "d_spk": 256,
        "hidden": 192,
        "enc_p_layers": 16,
        "enc_q_layers": 16,
        "flow_depth": 4,
        "flow_wn_layers": 4,
        "upsample_rates": [10, 8, 2, 2],
        "upsample_kernel_sizes": [20, 16, 4, 4],
        "upsample_initial_channel": 512,
        "resblock_kernel_sizes": [3, 7, 11],
        "resblock_dilation_sizes": [[1, 3, 5], [1, 3, 5], [1, 3, 5]],
        "mpd_periods": [2, 3, 5, 7, 11],
        "disc_channels": 32,
        "disc_max_channels": 1024,
        "content_backend": "wavlm",
        "speaker_backend": "resemblyzer",
    },
    "perturb": {"methods": ["sr"], "n_variants": 25},
    "teacher": {"profile": "paper", "perturbation": "sr", "speaker_sampling": False, **PAPER_TRAINING},
    "train": {"profile": "paper", "perturbation": "pseudo", "alpha": 0.01, **PAPER_TRAINING},
}


def _coerce(tp, value, path, problems):
    """Convert plain YAML data to the annotated field type, recording problems."""
    origin = get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if isinstance(value, tp):
            return value
        if not isinstance(value, dict):
            problems.append(f"{path}: expected a mapping")
            return tp()
        return _build(tp, value, path, problems)
    if origin is tuple:
        args = get_args(tp)
        if isinstance(value, str) or not hasattr(value, "__iter__"):
            problems.append(f"{path}: expected a list")
            return ()
        value = list(value)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]", problems) for i, v in enumerate(value))
        if len(args) != len(value):
            problems.append(f"{path}: expected {len(args)} items, got {len(value)}")
            return tuple(value)
        return tuple(_coerce(a, v, f"{path}[{i}]", problems) for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        problems.append(f"{path}: expected a boolean, got {value!r}")
        return False
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            problems.append(f"{path}: expected an integer, got {value!r}")
            return 0
        try:
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        except (ValueError, OverflowError):
            problems.append(f"{path}: expected an integer, got {value!r}")
            return 0
    if tp is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            problems.append(f"{path}: expected a number, got {value!r}")
            return 0.0
    if tp is str:
        return "" if value is None else str(value)
    return value


def _build(cls, data: dict, prefix: str, problems: list):
    hints = get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            problems.append(f"unknown key {prefix + '.' if prefix else ''}{key}")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], f"{prefix + '.' if prefix else ''}{f.name}", problems)
    return cls(**kwargs)


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_path(data: dict, dotted: str, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError([f"override {dotted}: {k} is not a section"])
    node[keys[-1]] = value


def parse_overrides(overrides) -> list[tuple[str, Any]]:
    parsed = []
    problems = []
    for item in overrides or ():
        if "=" not in item:
            problems.append(f"override {item!r} is not key=value")
            continue
        key, raw = item.split("=", 1)
        parsed.append((key.strip(), yaml.safe_load(raw) if raw.strip() else ""))
    if problems:
        raise ConfigError(problems)
    return parsed


def load_config(path=None, overrides=(), profile: str | None = None, seed: int | None = None) -> Config:
    """Resolve profile defaults, then the file, then ``key=value`` overrides."""
    data: dict = {}
    if path:
        text = Path(path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        data = loaded
    for key, value in parse_overrides(overrides):
        _set_path(data, key, value)
    if profile is not None:
        data["profile"] = profile
    if seed is not None:
        data["seed"] = seed
    prof = data.get("profile", "toy")
    defaults = PAPER_DEFAULTS if prof == "paper" else TOY_DEFAULTS
    merged = _deep_merge(defaults, data)
    top_seed = merged.get("seed", 0)
    for section in ("teacher", "train"):
        merged.setdefault(section, {}).setdefault("seed", top_seed)
    problems: list[str] = []
    cfg = _build(Config, merged, "", problems)
    problems += [p for p in cfg.validate() if p not in problems]
    if problems:
        raise ConfigError(problems)
    return cfg


def to_dict(cfg) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    return conv(cfg)


def config_hash(cfg) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def dump_config(cfg, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False), encoding="utf-8")
