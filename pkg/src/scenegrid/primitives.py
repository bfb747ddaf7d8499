"""Learnable building blocks: equalized and modulated layers, batch statistics.

All layers store weights as N(0, 1) draws and apply the equalized scale
gain / sqrt(fan_in) at use time, so every parameter sees comparable gradient
magnitudes under a shared learning rate. Activations (LeakyReLU 0.2) are
applied by the callers, not here.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

LEAKY_SLOPE = 0.2
DEMOD_EPS = 1e-8


def equalized_scale(fan_in: int, gain: float = 1.0) -> float:
    """Runtime multiplier for unit-variance stored weights."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    return gain / math.sqrt(fan_in)


def normalize_latent(z: torch.Tensor) -> torch.Tensor:
    """Rescale the last axis to unit RMS: z * sqrt(d) / ||z||."""
    norm = z.norm(dim=-1, keepdim=True)
    if (norm == 0).any():
        raise ValueError("cannot normalize a zero latent")
    return z * (math.sqrt(z.shape[-1]) / norm)


class EqualizedLinear(nn.Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 bias_init: float = 0.0, lr_mult: float = 1.0, gain: float = 1.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features) / lr_mult)
        self.bias = nn.Parameter(torch.full((out_features,), bias_init / lr_mult)) if bias else None
        self.scale = equalized_scale(in_features, gain) * lr_mult
        self.lr_mult = lr_mult

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b = self.bias * self.lr_mult if self.bias is not None else None
        return F.linear(x, self.weight * self.scale, b)


class EqualizedConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, bias: bool = True, gain: float = 1.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        self.scale = equalized_scale(in_ch * kernel * kernel, gain)
        self.padding = kernel // 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)


class ModulatedLinear(nn.Module):
    """Linear layer whose weights are scaled per input channel by a style vector."""

    def __init__(self, in_features: int, out_features: int, style_dim: int,
                 demodulate: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.style_projection = EqualizedLinear(style_dim, in_features, bias_init=1.0)
        self.scale = equalized_scale(in_features)
        self.demodulate = demodulate

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        """x: (..., in); style: (..., style_dim) broadcastable against x's batch dims.

        Computed as scale-inputs-then-matmul with a per-(sample, filter)
        demodulation coefficient, which equals building the per-sample
        effective weights w * s / sqrt(sum (w * s)^2 + eps) explicitly.
        """
        if style.shape[-1] != self.style_projection.weight.shape[1]:
            raise ValueError(
                f"style dim {style.shape[-1]} does not match projection "
                f"input {self.style_projection.weight.shape[1]}")
        if x.shape[-1] != self.weight.shape[1]:
            raise ValueError(
                f"input dim {x.shape[-1]} does not match weight {self.weight.shape[1]}")
        s = self.style_projection(style)  # (..., in)
        w = self.weight * self.scale  # (out, in)
        y = (x * s) @ w.T
        if self.demodulate:
            y = y * torch.rsqrt((s * s) @ (w * w).T + DEMOD_EPS)
        return y + self.bias


class ModulatedConv2d(nn.Module):
    """3x3 style-modulated convolution; up=True upsamples 2x via transposed conv + blur."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, style_dim: int,
                 demodulate: bool = True, up: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.style_projection = EqualizedLinear(style_dim, in_ch, bias_init=1.0)
        self.scale = equalized_scale(in_ch * kernel * kernel)
        self.demodulate = demodulate
        self.up = up
        self.kernel = kernel

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        b, in_ch, h, wdt = x.shape
        if style.dim() == 1:
            style = style.unsqueeze(0).expand(b, -1)
        s = self.style_projection(style)  # (b, in)
        w = (self.weight * self.scale).unsqueeze(0) * s.reshape(b, 1, in_ch, 1, 1)
        if self.demodulate:
            w = w * torch.rsqrt(w.pow(2).sum(dim=(2, 3, 4), keepdim=True) + DEMOD_EPS)
        # Grouped conv folds the per-sample weights into the batch dimension.
        x = x.reshape(1, b * in_ch, h, wdt)
        if self.up:
            w = w.transpose(1, 2).reshape(b * in_ch, -1, self.kernel, self.kernel)
            y = F.conv_transpose2d(x, w, stride=2, padding=self.kernel // 2,
                                   output_padding=1, groups=b)
            y = y.reshape(b, -1, h * 2, wdt * 2)
            y = blur2d(y)
        else:
            w = w.reshape(-1, in_ch, self.kernel, self.kernel)
            y = F.conv2d(x, w, padding=self.kernel // 2, groups=b)
            y = y.reshape(b, -1, h, wdt)
        return y + self.bias.reshape(1, -1, 1, 1)


_BLUR_KERNEL = torch.tensor([1.0, 2.0, 1.0])


def blur2d(x: torch.Tensor) -> torch.Tensor:
    """Separable [1, 2, 1] low-pass with replicate padding; preserves constants."""
    b, c, h, w = x.shape
    k = (_BLUR_KERNEL / _BLUR_KERNEL.sum()).to(dtype=x.dtype, device=x.device)
    kx = k.reshape(1, 1, 1, 3).expand(c, 1, 1, 3)
    ky = k.reshape(1, 1, 3, 1).expand(c, 1, 3, 1)
    x = F.pad(x, (1, 1, 1, 1), mode="replicate")
    x = F.conv2d(x, kx, groups=c)
    x = F.conv2d(x, ky, groups=c)
    return x


def minibatch_stddev(features: torch.Tensor, group_size: int = 4) -> torch.Tensor:
    """Append one channel holding the mean per-group batch stddev.

    The batch splits into groups of min(group_size, batch); per-location
    population stddev across each group is averaged over channels and pixels
    and broadcast back spatially.
    """
    b, c, h, w = features.shape
    g = min(group_size, b)
    while b % g != 0:
        g -= 1
    y = features.reshape(b // g, g, c, h, w)
    var = y.var(dim=1, unbiased=False)
    std = (var + 1e-8).sqrt()
    stat = std.mean(dim=(1, 2, 3), keepdim=True)  # (b//g, 1, 1, 1)
    stat = stat.repeat_interleave(g, dim=0).expand(b, 1, h, w)
    return torch.cat([features, stat], dim=1)


def resample_bilinear(x: torch.Tensor, factor: float) -> torch.Tensor:
    """2x bilinear upsampling or 0.5x (2x2 mean) downsampling of (b, c, h, w) maps."""
    if factor == 2:
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    if factor == 0.5:
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ValueError("downsampling requires even spatial dims")
        return F.avg_pool2d(x, 2)
    raise ValueError("factor must be 2 (up) or 0.5 (down)")
