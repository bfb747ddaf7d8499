"""RGB-D critic with residual downsampling blocks and a reconstruction decoder.

The critic scores 4-channel frames (RGB in [0, 1] plus depth normalized to
[0, 1]); its 4x4 bottleneck, taken before the minibatch-stddev layer, feeds
a small decoder whose reconstruction error regularizes the critic on real
samples. Depth-resolution utilities implement the real/generated detail
matching and the ablation filter that pools depth down to a target grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .primitives import (
    LEAKY_SLOPE,
    EqualizedConv2d,
    EqualizedLinear,
    blur2d,
    equalized_scale,
    minibatch_stddev,
    resample_bilinear,
)


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_res: int = 64
    in_channels: int = 4
    base_channels: int = 64
    max_channels: int = 512
    mbstd_group: int = 4

    def __post_init__(self):
        if self.input_res < 8 or self.input_res & (self.input_res - 1):
            raise ValueError("input_res must be a power of two >= 8")

    @staticmethod
    def paper() -> "DiscriminatorConfig":
        return DiscriminatorConfig()

    @staticmethod
    def desk() -> "DiscriminatorConfig":
        return DiscriminatorConfig(input_res=32, base_channels=32, max_channels=256)

    def channel_schedule(self) -> list[int]:
        """Channels entering each resolution level, 4x4 last."""
        n_blocks = int(math.log2(self.input_res // 4))
        chans = [min(self.base_channels * (2 ** i), self.max_channels)
                 for i in range(n_blocks + 1)]
        return chans


@dataclass
class CriticOutput:
    score: torch.Tensor  # (b,)
    bottleneck: torch.Tensor  # (b, ch, 4, 4), pre minibatch-stddev


class ResidualBlock(nn.Module):
    """Two 3x3 convs plus a 1x1 downsampling skip, summed and scaled by 1/sqrt(2)."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = EqualizedConv2d(in_ch, in_ch, 3)
        self.conv2 = EqualizedConv2d(in_ch, out_ch, 3)
        self.skip = EqualizedConv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        y = F.leaky_relu(self.conv2(resample_bilinear(y, 0.5)), LEAKY_SLOPE)
        skip = self.skip(resample_bilinear(x, 0.5))
        return (y + skip) / math.sqrt(2.0)


class Critic(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.channel_schedule()
        self.from_input = EqualizedConv2d(cfg.in_channels, chans[0], 3)
        self.blocks = nn.ModuleList(
            [ResidualBlock(chans[i], chans[i + 1]) for i in range(len(chans) - 1)])
        bott = chans[-1]
        self.post_stddev = EqualizedConv2d(bott + 1, bott, 3)
        self.fc = EqualizedLinear(bott * 16, bott)
        self.out = EqualizedLinear(bott, 1)

    def forward(self, frame: torch.Tensor) -> CriticOutput:
        """frame: (b, 4, res, res) with RGB and depth both normalized to [0, 1]."""
        if frame.dim() != 4 or frame.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"expected (b, {self.cfg.in_channels}, {self.cfg.input_res}, "
                f"{self.cfg.input_res}) input, got {tuple(frame.shape)}")
        x = F.leaky_relu(self.from_input(frame), LEAKY_SLOPE)
        for block in self.blocks:
            x = block(x)
        bottleneck = x  # (b, ch, 4, 4)
        x = minibatch_stddev(x, self.cfg.mbstd_group)
        x = F.leaky_relu(self.post_stddev(x), LEAKY_SLOPE)
        x = F.leaky_relu(self.fc(x.flatten(1)), LEAKY_SLOPE)
        score = self.out(x).squeeze(-1)
        return CriticOutput(score=score, bottleneck=bottleneck)


class DecoderUpBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(in_ch, out_ch, 3, 3))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = equalized_scale(in_ch * 9)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.conv_transpose2d(x, self.weight * self.scale, self.bias, stride=2,
                               padding=1, output_padding=1)
        return F.leaky_relu(blur2d(y), LEAKY_SLOPE)


class ReconstructionDecoder(nn.Module):
    """Upsamples the 4x4 bottleneck back to the critic's input frame."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        chans = cfg.channel_schedule()
        stages = []
        ch = chans[-1]
        for target in reversed(chans[:-1]):
            stages.append(DecoderUpBlock(ch, target))
            ch = target
        self.stages = nn.ModuleList(stages)
        self.to_frame = EqualizedConv2d(ch, cfg.in_channels, 3)

    def forward(self, bottleneck: torch.Tensor) -> torch.Tensor:
        x = bottleneck
        for stage in self.stages:
            x = stage(x)
        return self.to_frame(x)


# ----------------------------------------------------------------------------
# Depth helpers


def normalize_depth(depth: torch.Tensor, near: float, far: float) -> torch.Tensor:
    """Map depth to [0, 1] via (d - near) / (far - near), clamped."""
    return ((depth - near) / (far - near)).clamp(0.0, 1.0)


def _pool_to(x: torch.Tensor, target_res: int) -> torch.Tensor:
    if x.shape[-1] % target_res or x.shape[-2] % target_res:
        raise ValueError("resolution must divide the input evenly")
    return F.adaptive_avg_pool2d(x, target_res)


def match_depth_resolution(real_depth: torch.Tensor, generated_res: int) -> torch.Tensor:
    """Down- then upsample real depth so it carries no more detail than generated depth."""
    squeeze = real_depth.dim() == 2
    x = real_depth.reshape(1, 1, *real_depth.shape[-2:]) if squeeze else real_depth
    h = x.shape[-2]
    if generated_res > h:
        raise ValueError("generated_res cannot exceed the real resolution")
    if generated_res != h:
        x = _pool_to(x, generated_res)
        x = F.interpolate(x, size=(h, h), mode="bilinear", align_corners=False)
    return x.reshape(real_depth.shape)


def depth_ablation_filter(depth: torch.Tensor, target_res: int,
                          mode: str = "bilinear") -> torch.Tensor:
    """Average-pool depth to target_res x target_res and upsample back.

    target_res=1 collapses the map to its mean; mode picks the upsampling
    interpolation (bilinear default, nearest keeps constant blocks).
    """
    if target_res < 1:
        raise ValueError("target_res must be >= 1")
    squeeze = depth.dim() == 2
    x = depth.reshape(1, 1, *depth.shape[-2:]) if squeeze else depth
    h, w = x.shape[-2:]
    if target_res != h or target_res != w:
        x = _pool_to(x, target_res)
        kwargs = {} if mode == "nearest" else {"align_corners": False}
        x = F.interpolate(x, size=(h, w), mode=mode, **kwargs)
    return x.reshape(depth.shape)
