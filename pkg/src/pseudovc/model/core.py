"""Model handle, per-operation entry points, inference and checkpoints."""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from ..audio import Waveform
from ..config import AudioConfig, ConfigError, ModelConfig, _build, to_dict
from ..dsp.spectral import linear_spectrogram
from .backends import align_frames, content_backend, speaker_backend, stft_config
from .networks import GaussianSeq, MultiDiscriminator, SynthesizerTrn

CHECKPOINT_FORMAT = "pseudovc-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class VCModel:
    """Generator, discriminator and the two frozen backends."""

    def __init__(self, cfg: ModelConfig, audio: AudioConfig, content=None, speaker=None, seed: int | None = None):
        problems = cfg.validate()
        if problems:
            raise ConfigError(problems)
        self.cfg = cfg
        self.audio = audio
        self.stft = stft_config(audio)
        if seed is not None:
            torch.manual_seed(seed)
        self.net_g = SynthesizerTrn(cfg, self.stft.n_bins)
        self.net_d = MultiDiscriminator(cfg)
        self.content = content if content is not None else content_backend(cfg, audio)
        self.speaker = speaker if speaker is not None else speaker_backend(cfg, audio)

    @property
    def hop(self) -> int:
        return self.cfg.hop

    def eval(self):
        self.net_g.eval()
        self.net_d.eval()
        return self


def _t(x: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))


def extract_content(w: Waveform, backend) -> np.ndarray:
    """(n_frames, d_content) from the frozen content backend."""
    return np.asarray(backend(w), dtype=np.float32)


def speaker_embed(w: Waveform, backend) -> np.ndarray:
    e = np.asarray(backend.embed(w), dtype=np.float64)
    return e / np.linalg.norm(e)


def bottleneck(net: SynthesizerTrn, content: np.ndarray | torch.Tensor) -> GaussianSeq:
    """Prior statistics for one utterance, each (d_z, n_frames)."""
    c = content if isinstance(content, torch.Tensor) else _t(content)
    c = c.T.unsqueeze(0)
    mask = torch.ones(1, 1, c.shape[2], dtype=c.dtype)
    p = net.enc_p(c, mask)
    return GaussianSeq(p.mu[0], p.log_sigma[0])


def posterior_encode(net: SynthesizerTrn, lin: np.ndarray, g: np.ndarray, generator=None, noise_scale: float = 1.0):
    """``lin`` is (n_frames, n_bins); returns ``(z, q)`` with tensors (d_z, n_frames)."""
    x = _t(lin).T.unsqueeze(0)
    mask = torch.ones(1, 1, x.shape[2])
    z, q = net.enc_q(x, mask, _t(g)[None, :, None], noise_scale=noise_scale, generator=generator)
    return z[0], GaussianSeq(q.mu[0], q.log_sigma[0])


def flow_forward(net: SynthesizerTrn, z: torch.Tensor, g: np.ndarray):
    mask = torch.ones(1, 1, z.shape[-1], dtype=z.dtype)
    z_p, log_det = net.flow(z.unsqueeze(0), mask, g=_t(g).to(z.dtype)[None, :, None])
    return z_p[0], float(log_det[0])


def flow_inverse(net: SynthesizerTrn, z_p: torch.Tensor, g: np.ndarray):
    mask = torch.ones(1, 1, z_p.shape[-1], dtype=z_p.dtype)
    return net.flow.inverse(z_p.unsqueeze(0), mask, g=_t(g).to(z_p.dtype)[None, :, None])[0]


def decode(net: SynthesizerTrn, z: torch.Tensor, g: np.ndarray, rate: int = 16000) -> Waveform:
    y = net.dec(z.unsqueeze(0), _t(g).to(z.dtype)[None, :, None])
    return Waveform(y[0, 0].detach().numpy(), rate)


def discriminate(disc: MultiDiscriminator, w: Waveform | torch.Tensor):
    y = w if isinstance(w, torch.Tensor) else _t(w.samples)[None, None]
    return disc(y)


@torch.no_grad()
def convert(model: VCModel, source: Waveform, reference: Waveform, temperature: float = 0.0, generator=None) -> Waveform:
    """Render the content of ``source`` in the voice of ``reference``."""
    for name, w in (("source", source), ("reference", reference)):
        if w.rate != model.audio.sample_rate:
            raise ValueError(f"{name} must be at {model.audio.sample_rate} Hz, got {w.rate}")
    content = extract_content(source, model.content)
    n_frames = len(source) // model.hop
    content = align_frames(content, n_frames)
    g = speaker_embed(reference, model.speaker)
    model.net_g.eval()
    y = model.net_g.infer(_t(content).T.unsqueeze(0), _t(g)[None], temperature=temperature, generator=generator)
    return Waveform(y[0, 0].numpy(), model.audio.sample_rate)


def target_spectrogram(model: VCModel, w: Waveform) -> np.ndarray:
    return linear_spectrogram(w, model.stft).values


# -- checkpoints ----------------------------------------------------------------


def atomic_torch_save(obj, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def save_checkpoint(path, model: VCModel, step: int, training_hash: str = "", extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": to_dict(model.cfg),
        "audio_config": to_dict(model.audio),
        "training_config_hash": training_hash,
        "step": int(step),
        "net_g": model.net_g.state_dict(),
        "net_d": model.net_d.state_dict(),
    }
    payload.update(extra or {})
    atomic_torch_save(payload, path)


def read_checkpoint(path, expect_training_hash: str | None = None) -> dict:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    if expect_training_hash is not None and payload["training_config_hash"] != expect_training_hash:
        raise CheckpointError(
            f"{path}: training config hash {payload['training_config_hash'][:12]} does not match {expect_training_hash[:12]}"
        )
    return payload


def load_model(path, content=None, speaker=None) -> tuple[VCModel, dict]:
    payload = read_checkpoint(path)
    problems: list[str] = []
    cfg = _build(ModelConfig, payload["model_config"], "model", problems)
    audio = _build(AudioConfig, payload["audio_config"], "audio", problems)
    if problems:
        raise CheckpointError(f"{path}: incompatible config: {problems}")
    model = VCModel(cfg, audio, content=content, speaker=speaker)
    model.net_g.load_state_dict(payload["net_g"])
    model.net_d.load_state_dict(payload["net_d"])
    return model, payload


def file_digest(path, length: int = 12) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:length]
