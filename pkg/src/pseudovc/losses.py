"""Reconstruction, KL, least-squares adversarial and feature-matching losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .config import LossWeights

_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    kl: float
    adv_d: float
    adv_g: float
    fm: float
    total_g: float
    total_d: float

    def as_row(self):
        return [self.rec, self.kl, self.adv_d, self.adv_g, self.fm, self.total_g, self.total_d]


def _masked_mean(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return x.mean()
    mask = mask.expand_as(x).to(x.dtype)
    return (x * mask).sum() / mask.sum()


def loss_recon(mel_target: torch.Tensor, mel_pred: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean absolute difference over all (valid) cells."""
    if mel_target.shape != mel_pred.shape:
        raise ValueError(f"shape mismatch: {tuple(mel_target.shape)} vs {tuple(mel_pred.shape)}")
    return _masked_mean((mel_target - mel_pred).abs(), mask)


def gaussian_log_density(x, mu, log_sigma):
    return -_HALF_LOG_2PI - log_sigma - 0.5 * ((x - mu) * torch.exp(-log_sigma)) ** 2


def loss_kl(q, z, z_p, log_det, p, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Single-sample KL estimate through the flow.

    ``q`` and ``p`` are ``(mu, log_sigma)`` pairs shaped like ``z``;
    ``z_p`` is ``flow(z)`` and ``log_det`` the per-item log-Jacobian.
    Returns the mean over valid elements of
    ``log q(z) - log N(z_p; p)`` minus the log-det spread per element.
    """
    tensors = [z, z_p, q[0], q[1], p[0], p[1], torch.as_tensor(log_det)]
    if not all(torch.isfinite(t).all() for t in tensors):
        raise ValueError("non-finite input to loss_kl")
    log_q = gaussian_log_density(z, q[0], q[1])
    log_p = gaussian_log_density(z_p, p[0], p[1])
    diff = log_q - log_p
    if mask is None:
        n = diff.numel()
        return (diff.sum() - torch.as_tensor(log_det, dtype=diff.dtype).sum()) / n
    mask = mask.expand_as(diff).to(diff.dtype)
    n = mask.sum()
    return ((diff * mask).sum() - torch.as_tensor(log_det, dtype=diff.dtype).sum()) / n


def loss_adv(d_real, d_fake):
    """Least-squares GAN terms summed over sub-discriminators.

    Returns ``(adv_d, adv_g)``; pass ``d_real=None`` to compute only the
    generator term.
    """
    if not d_fake:
        raise ValueError("empty discriminator output list")
    adv_g = sum(((1 - dg) ** 2).mean() for dg in d_fake)
    if d_real is None:
        return None, adv_g
    if len(d_real) != len(d_fake):
        raise ValueError("real and fake score lists differ in length")
    adv_d = sum(((1 - dr) ** 2).mean() + (dg**2).mean() for dr, dg in zip(d_real, d_fake))
    return adv_d, adv_g


def loss_fm(features_real, features_fake) -> torch.Tensor:
    """Sum over sub-discriminators and layers of mean |real - fake|; real side is detached."""
    if len(features_real) != len(features_fake):
        raise ValueError("feature lists differ in number of sub-discriminators")
    total = 0.0
    for fr, fg in zip(features_real, features_fake):
        if len(fr) != len(fg):
            raise ValueError("feature lists differ in number of layers")
        for r, g in zip(fr, fg):
            if r.shape != g.shape:
                raise ValueError(f"feature shape mismatch: {tuple(r.shape)} vs {tuple(g.shape)}")
            total = total + (r.detach() - g).abs().mean()
    return total


def generator_total(rec, kl, adv_g, fm, w: LossWeights):
    return w.rec * rec + w.kl * kl + adv_g + w.fm * fm


def assemble(rec, kl, adv_d, adv_g, fm, w: LossWeights | None = None) -> LossBreakdown:
    """Weighted totals; raises naming the first non-finite term."""
    w = w or LossWeights()
    values = {"rec": rec, "kl": kl, "adv_d": adv_d, "adv_g": adv_g, "fm": fm}
    values = {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in values.items()}
    for name, v in values.items():
        if not math.isfinite(v):
            raise FloatingPointError(f"loss term {name} is not finite ({v})")
    total_g = generator_total(values["rec"], values["kl"], values["adv_g"], values["fm"], w)
    return LossBreakdown(total_g=total_g, total_d=values["adv_d"], **values)
