"""Conditional VAE generator (bottleneck, posterior encoder, flow, HiFi-GAN decoder) and discriminators."""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.parametrizations import spectral_norm, weight_norm

from ..config import ModelConfig
from .modules import LRELU_SLOPE, WN, CouplingLayer, ResBlock1, get_padding, init_weights


class GaussianSeq(NamedTuple):
    """Frame-wise diagonal Gaussian, each tensor (batch, d_z, frames)."""

    mu: torch.Tensor
    log_sigma: torch.Tensor


class Bottleneck(nn.Module):
    """Maps frozen content features to the prior mean and log-scale.

    The output projection is zero-initialised, so a fresh bottleneck
    gives a standard normal prior.
    """

    def __init__(self, in_channels, out_channels, hidden_channels, kernel_size, n_layers):
        super().__init__()
        self.out_channels = out_channels
        self.pre = nn.Conv1d(in_channels, hidden_channels, 1)
        self.enc = WN(hidden_channels, kernel_size, 1, n_layers)
        self.proj = nn.Conv1d(hidden_channels, out_channels * 2, 1)
        self.proj.weight.data.zero_()
        self.proj.bias.data.zero_()

    def forward(self, c, c_mask) -> GaussianSeq:
        x = self.pre(c) * c_mask
        x = self.enc(x, c_mask)
        stats = self.proj(x) * c_mask
        m, logs = torch.split(stats, self.out_channels, dim=1)
        return GaussianSeq(m, logs)


class PosteriorEncoder(nn.Module):
    """WaveNet encoder of the linear spectrogram, conditioned on the speaker."""

    def __init__(self, in_channels, out_channels, hidden_channels, kernel_size, n_layers, gin_channels):
        super().__init__()
        self.out_channels = out_channels
        self.pre = nn.Conv1d(in_channels, hidden_channels, 1)
        self.enc = WN(hidden_channels, kernel_size, 1, n_layers, gin_channels=gin_channels)
        self.proj = nn.Conv1d(hidden_channels, out_channels * 2, 1)

    def forward(self, x, x_mask, g, noise_scale=1.0, generator=None, noise=None):
        """Returns ``(z, q)`` with ``z = mu + noise_scale * sigma * eps``.

        ``noise`` overrides the draw from ``generator`` when given.
        """
        x = self.pre(x) * x_mask
        x = self.enc(x, x_mask, g=g)
        stats = self.proj(x) * x_mask
        m, logs = torch.split(stats, self.out_channels, dim=1)
        if noise is None:
            noise = torch.randn(m.shape, generator=generator, dtype=m.dtype, device=m.device)
        z = (m + noise * noise_scale * torch.exp(logs)) * x_mask
        return z, GaussianSeq(m, logs)


class Flow(nn.Module):
    """Stack of speaker-conditioned affine couplings with alternating parity."""

    def __init__(self, channels, hidden_channels, kernel_size, n_layers, n_flows, gin_channels, mean_only=True):
        super().__init__()
        self.flows = nn.ModuleList(
            CouplingLayer(channels, hidden_channels, kernel_size, 1, n_layers, parity=i % 2, gin_channels=gin_channels, mean_only=mean_only)
            for i in range(n_flows)
        )

    def forward(self, z, mask, g=None, return_layers=False):
        """Posterior latent -> prior space. Returns ``(z_p, log_det)``; per-layer log-dets on request."""
        log_dets = []
        for flow in self.flows:
            z, ld = flow(z, mask, g=g)
            log_dets.append(ld)
        total = torch.stack(log_dets).sum(0) if log_dets else torch.zeros(z.shape[0], dtype=z.dtype)
        if return_layers:
            return z, total, log_dets
        return z, total

    def inverse(self, z_p, mask, g=None):
        for flow in reversed(self.flows):
            z_p, _ = flow(z_p, mask, g=g, reverse=True)
        return z_p


class Generator(nn.Module):
    """HiFi-GAN V1 decoder with an additive speaker condition and tanh output."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch0 = cfg.upsample_initial_channel
        self.num_kernels = len(cfg.resblock_kernel_sizes)
        self.num_upsamples = len(cfg.upsample_rates)
        self.conv_pre = nn.Conv1d(cfg.d_z, ch0, 7, 1, padding=3)
        self.cond = nn.Conv1d(cfg.d_spk, ch0, 1)
        self.ups = nn.ModuleList()
        for i, (u, k) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernel_sizes)):
            self.ups.append(weight_norm(nn.ConvTranspose1d(ch0 // (2**i), ch0 // (2 ** (i + 1)), k, u, padding=(k - u) // 2)))
        self.resblocks = nn.ModuleList()
        for i in range(len(self.ups)):
            ch = ch0 // (2 ** (i + 1))
            for k, d in zip(cfg.resblock_kernel_sizes, cfg.resblock_dilation_sizes):
                self.resblocks.append(ResBlock1(ch, k, d))
        self.conv_post = nn.Conv1d(ch, 1, 7, 1, padding=3, bias=False)
        self.ups.apply(init_weights)

    def forward(self, x, g):
        x = self.conv_pre(x) + self.cond(g)
        for i in range(self.num_upsamples):
            x = F.leaky_relu(x, LRELU_SLOPE)
            x = self.ups[i](x)
            xs = None
            for j in range(self.num_kernels):
                y = self.resblocks[i * self.num_kernels + j](x)
                xs = y if xs is None else xs + y
            x = xs / self.num_kernels
        x = F.leaky_relu(x)
        return torch.tanh(self.conv_post(x))


class SynthesizerTrn(nn.Module):
    """Generator side: bottleneck prior, posterior encoder, flow and decoder."""

    def __init__(self, cfg: ModelConfig, n_bins: int):
        super().__init__()
        self.cfg = cfg
        self.enc_p = Bottleneck(cfg.d_content, cfg.d_z, cfg.hidden, cfg.wn_kernel, cfg.enc_p_layers)
        self.enc_q = PosteriorEncoder(n_bins, cfg.d_z, cfg.hidden, cfg.wn_kernel, cfg.enc_q_layers, cfg.d_spk)
        self.flow = Flow(cfg.d_z, cfg.hidden, cfg.wn_kernel, cfg.flow_wn_layers, cfg.flow_depth, cfg.d_spk, cfg.flow_mean_only)
        self.dec = Generator(cfg)

    def forward(self, content, lin, g, mask, generator=None, noise=None):
        """Training pass.

        Args:
            content: (B, d_content, T) frozen content features of the content input.
            lin: (B, n_bins, T) linear spectrogram of the target.
            g: (B, d_spk) speaker embedding of the speaker input.
            mask: (B, 1, T) valid-frame mask.
        """
        g = g.unsqueeze(-1)
        p = self.enc_p(content, mask)
        z, q = self.enc_q(lin, mask, g, generator=generator, noise=noise)
        z_p, log_det = self.flow(z, mask, g=g)
        y_hat = self.dec(z, g)
        return y_hat, {"z": z, "z_p": z_p, "log_det": log_det, "p": p, "q": q}

    @torch.no_grad()
    def infer(self, content, g, mask=None, temperature=0.0, generator=None):
        """Conversion path: prior sample -> inverse flow under ``g`` -> decoder."""
        if mask is None:
            mask = torch.ones(content.shape[0], 1, content.shape[2], dtype=content.dtype)
        g = g.unsqueeze(-1)
        p = self.enc_p(content, mask)
        z_p = p.mu
        if temperature > 0:
            eps = torch.randn(p.mu.shape, generator=generator, dtype=p.mu.dtype)
            z_p = z_p + temperature * eps * torch.exp(p.log_sigma)
        z = self.flow.inverse(z_p * mask, mask, g=g)
        return self.dec(z * mask, g)


class DiscriminatorP(nn.Module):
    def __init__(self, period, channels=32, max_channels=1024, kernel_size=5, stride=3, use_spectral_norm=False):
        super().__init__()
        self.period = period
        norm_f = spectral_norm if use_spectral_norm else weight_norm
        chs = [1] + [min(channels * 4**i, max_channels) for i in range(4)] + [min(channels * 32, max_channels)]
        self.convs = nn.ModuleList()
        for i in range(5):
            s = stride if i < 4 else 1
            self.convs.append(norm_f(nn.Conv2d(chs[i], chs[i + 1], (kernel_size, 1), (s, 1), padding=(get_padding(kernel_size, 1), 0))))
        self.conv_post = norm_f(nn.Conv2d(chs[-1], 1, (3, 1), 1, padding=(1, 0)))

    def forward(self, x):
        fmap = []
        b, c, t = x.shape
        if t % self.period != 0:
            n_pad = self.period - (t % self.period)
            x = F.pad(x, (0, n_pad), "reflect")
            t = t + n_pad
        x = x.view(b, c, t // self.period, self.period)
        for layer in self.convs:
            x = F.leaky_relu(layer(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return torch.flatten(x, 1, -1), fmap


class DiscriminatorS(nn.Module):
    def __init__(self, channels=16, max_channels=1024, use_spectral_norm=False):
        super().__init__()
        norm_f = spectral_norm if use_spectral_norm else weight_norm
        chs = [1, channels, channels * 4, channels * 16, max_channels, max_channels, max_channels]
        chs = [min(c, max_channels) for c in chs]
        specs = [(15, 1, 7, 1), (41, 4, 20, 4), (41, 4, 20, 16), (41, 4, 20, 16), (41, 4, 20, 16), (5, 1, 2, 1)]
        self.convs = nn.ModuleList()
        for i, (k, s, p, groups) in enumerate(specs):
            groups = math.gcd(groups, math.gcd(chs[i], chs[i + 1]))
            self.convs.append(norm_f(nn.Conv1d(chs[i], chs[i + 1], k, s, groups=groups, padding=p)))
        self.conv_post = norm_f(nn.Conv1d(chs[-1], 1, 3, 1, padding=1))

    def forward(self, x):
        fmap = []
        for layer in self.convs:
            x = F.leaky_relu(layer(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return torch.flatten(x, 1, -1), fmap


class MultiDiscriminator(nn.Module):
    """Multi-scale plus multi-period sub-discriminators."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        scales = [DiscriminatorS(max(cfg.disc_channels // 2, 1), cfg.disc_max_channels, use_spectral_norm=(i == 0)) for i in range(cfg.msd_scales)]
        periods = [DiscriminatorP(p, cfg.disc_channels, cfg.disc_max_channels) for p in cfg.mpd_periods]
        self.discriminators = nn.ModuleList(periods + scales)
        self.pool = nn.AvgPool1d(4, 2, padding=2)

    def forward(self, y):
        """Returns ``(logits, features)``: one entry per sub-discriminator."""
        logits, fmaps = [], []
        n_periods = len(self.discriminators) - sum(isinstance(d, DiscriminatorS) for d in self.discriminators)
        scale_idx = 0
        for i, d in enumerate(self.discriminators):
            x = y
            if i >= n_periods:
                for _ in range(scale_idx):
                    x = self.pool(x)
                scale_idx += 1
            out, fmap = d(x)
            logits.append(out)
            fmaps.append(fmap)
        return logits, fmaps
