"""Network building blocks: WaveNet stack, HiFi-GAN residual block, affine coupling."""

import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.parametrizations import weight_norm

LRELU_SLOPE = 0.1


def get_padding(kernel_size, dilation=1):
    return (kernel_size * dilation - dilation) // 2


def init_weights(m, mean=0.0, std=0.01):
    if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)):
        m.weight.data.normal_(mean, std)


def sequence_mask(lengths, max_length=None):
    if max_length is None:
        max_length = int(lengths.max())
    x = torch.arange(max_length, dtype=lengths.dtype, device=lengths.device)
    return x.unsqueeze(0) < lengths.unsqueeze(1)


def fused_add_tanh_sigmoid_multiply(a, b, n_channels):
    acts = a + b
    return torch.tanh(acts[:, :n_channels]) * torch.sigmoid(acts[:, n_channels:])


class WN(nn.Module):
    """Non-causal WaveNet residual stack with optional global conditioning."""

    def __init__(self, hidden_channels, kernel_size, dilation_rate, n_layers, gin_channels=0):
        super().__init__()
        assert kernel_size % 2 == 1
        self.hidden_channels = hidden_channels
        self.n_layers = n_layers
        self.in_layers = nn.ModuleList()
        self.res_skip_layers = nn.ModuleList()
        if gin_channels:
            self.cond_layer = weight_norm(nn.Conv1d(gin_channels, 2 * hidden_channels * n_layers, 1))
        else:
            self.cond_layer = None
        for i in range(n_layers):
            dilation = dilation_rate**i
            padding = (kernel_size * dilation - dilation) // 2
            self.in_layers.append(
                weight_norm(nn.Conv1d(hidden_channels, 2 * hidden_channels, kernel_size, dilation=dilation, padding=padding))
            )
            # last layer only feeds the skip path
            res_skip = 2 * hidden_channels if i < n_layers - 1 else hidden_channels
            self.res_skip_layers.append(weight_norm(nn.Conv1d(hidden_channels, res_skip, 1)))

    def forward(self, x, x_mask, g=None):
        output = torch.zeros_like(x)
        if g is not None and self.cond_layer is not None:
            g = self.cond_layer(g)
        for i in range(self.n_layers):
            x_in = self.in_layers[i](x)
            if g is not None and self.cond_layer is not None:
                offset = i * 2 * self.hidden_channels
                g_l = g[:, offset : offset + 2 * self.hidden_channels]
            else:
                g_l = torch.zeros_like(x_in)
            acts = fused_add_tanh_sigmoid_multiply(x_in, g_l, self.hidden_channels)
            res_skip = self.res_skip_layers[i](acts)
            if i < self.n_layers - 1:
                x = (x + res_skip[:, : self.hidden_channels]) * x_mask
                output = output + res_skip[:, self.hidden_channels :]
            else:
                output = output + res_skip
        return output * x_mask


class ResBlock1(nn.Module):
    """HiFi-GAN V1 multi-receptive-field residual block."""

    def __init__(self, channels, kernel_size=3, dilation=(1, 3, 5)):
        super().__init__()
        self.convs1 = nn.ModuleList(
            weight_norm(nn.Conv1d(channels, channels, kernel_size, 1, dilation=d, padding=get_padding(kernel_size, d)))
            for d in dilation
        )
        self.convs2 = nn.ModuleList(
            weight_norm(nn.Conv1d(channels, channels, kernel_size, 1, dilation=1, padding=get_padding(kernel_size, 1)))
            for _ in dilation
        )
        self.convs1.apply(init_weights)
        self.convs2.apply(init_weights)

    def forward(self, x):
        for c1, c2 in zip(self.convs1, self.convs2):
            xt = c2(F.leaky_relu(c1(F.leaky_relu(x, LRELU_SLOPE)), LRELU_SLOPE))
            x = xt + x
        return x


class CouplingLayer(nn.Module):
    """Affine coupling; ``parity`` picks which half is transformed.

    The output projection starts at zero so a fresh layer is the identity.
    With ``mean_only`` the scale is fixed at one (volume preserving).
    """

    def __init__(self, channels, hidden_channels, kernel_size, dilation_rate, n_layers, parity=0, gin_channels=0, mean_only=True):
        super().__init__()
        assert channels % 2 == 0, "channels should be divisible by 2"
        self.half = channels // 2
        self.parity = parity
        self.mean_only = mean_only
        self.pre = nn.Conv1d(self.half, hidden_channels, 1)
        self.enc = WN(hidden_channels, kernel_size, dilation_rate, n_layers, gin_channels=gin_channels)
        self.post = nn.Conv1d(hidden_channels, self.half * (1 if mean_only else 2), 1)
        self.post.weight.data.zero_()
        self.post.bias.data.zero_()

    def _split(self, x):
        a, b = x[:, : self.half], x[:, self.half :]
        return (a, b) if self.parity == 0 else (b, a)

    def _join(self, cond, moved):
        return torch.cat([cond, moved] if self.parity == 0 else [moved, cond], 1)

    def _stats(self, x0, x_mask, g):
        h = self.enc(self.pre(x0) * x_mask, x_mask, g=g)
        stats = self.post(h) * x_mask
        if self.mean_only:
            return stats, torch.zeros_like(stats)
        return stats[:, : self.half], stats[:, self.half :]

    def forward(self, x, x_mask, g=None, reverse=False):
        x0, x1 = self._split(x)
        m, logs = self._stats(x0, x_mask, g)
        if not reverse:
            x1 = m + x1 * torch.exp(logs) * x_mask
            return self._join(x0, x1), torch.sum(logs, [1, 2])
        x1 = (x1 - m) * torch.exp(-logs) * x_mask
        return self._join(x0, x1), -torch.sum(logs, [1, 2])
