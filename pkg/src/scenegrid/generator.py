"""Scene generator: latent -> code grid -> locally conditioned field -> frame.

The pipeline is style-based: a mapping network turns the scene latent into a
style vector, a convolutional global generator grows a learned 4x4 constant
into the (c, s, s) grid of local codes, and a modulated MLP predicts
occupancy and appearance for points expressed in per-cell local frames.
Rendered feature maps pass through refinement blocks that upsample 2x each
and accumulate an RGB skip path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F
from torch import nn

from . import geometry
from .geometry import GridLayout
from .primitives import (
    LEAKY_SLOPE,
    EqualizedConv2d,
    EqualizedLinear,
    ModulatedConv2d,
    ModulatedLinear,
    blur2d,
    equalized_scale,
    normalize_latent,
)
from .renderer import RadianceSample, render_map


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 128
    grid_channels: int = 32
    grid_size: int = 32
    base_channels: int = 256
    field_width: int = 128
    field_depth: int = 8
    feature_dim: int = 64
    refinement_blocks: int = 1
    samples_per_ray: int = 64
    pos_freqs: int = 10
    dir_freqs: int = 4
    output_res: int = 64
    extent: float = 4.0
    y_extent: float = 2.5
    demodulate: bool = True
    conditioning: str = "local"  # "local": per-cell codes; "global": one pooled code

    def __post_init__(self):
        for name in ("latent_dim", "grid_channels", "grid_size", "base_channels",
                     "field_width", "field_depth", "feature_dim", "samples_per_ray",
                     "output_res"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.output_res % (2 ** self.refinement_blocks):
            raise ValueError("output_res must be divisible by 2^refinement_blocks")
        if self.refinement_blocks == 0 and self.feature_dim != 3:
            raise ValueError("direct rendering (no refinement) requires feature_dim=3")
        if self.conditioning not in ("local", "global"):
            raise ValueError("conditioning must be 'local' or 'global'")

    @property
    def render_res(self) -> int:
        """Feature-map resolution the field is sampled at."""
        return self.output_res // (2 ** self.refinement_blocks)

    def layout(self) -> GridLayout:
        return GridLayout(size=self.grid_size, extent=self.extent, y_extent=self.y_extent)

    @staticmethod
    def paper() -> "GeneratorConfig":
        return GeneratorConfig()

    @staticmethod
    def desk() -> "GeneratorConfig":
        return GeneratorConfig(latent_dim=64, grid_channels=16, grid_size=16,
                               base_channels=64, field_width=64, field_depth=4,
                               feature_dim=32, refinement_blocks=1, samples_per_ray=32,
                               pos_freqs=6, dir_freqs=4, output_res=32)

    def direct_rgb(self) -> "GeneratorConfig":
        """Variant rendering raw RGB with no refinement; used by closed-form tests."""
        return replace(self, feature_dim=3, refinement_blocks=0)


@dataclass
class LatentGrid:
    """The latent floorplan: a (c, s, s) grid of local codes plus its placement."""

    codes: torch.Tensor
    layout: GridLayout

    def __post_init__(self):
        if self.codes.dim() != 3 or self.codes.shape[-1] != self.codes.shape[-2]:
            raise ValueError("codes must be (c, s, s)")
        if self.codes.shape[-1] != self.layout.size:
            raise ValueError("grid size does not match layout")
        if not torch.isfinite(self.codes).all():
            raise ValueError("codes must be finite")

    def sample(self, uv: torch.Tensor) -> torch.Tensor:
        return geometry.bilinear_sample(self.codes, uv)

    def rotated(self, quarter_turns: int) -> "LatentGrid":
        return LatentGrid(geometry.rotate_grid(self.codes, quarter_turns), self.layout)

    def mirrored(self, axis: int) -> "LatentGrid":
        return LatentGrid(geometry.mirror_grid(self.codes, axis), self.layout)


class MappingNetwork(nn.Module):
    """Normalize, then three equalized linear layers with LeakyReLU."""

    def __init__(self, latent_dim: int):
        super().__init__()
        self.layers = nn.ModuleList(
            [EqualizedLinear(latent_dim, latent_dim) for _ in range(3)])

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = normalize_latent(z)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), LEAKY_SLOPE)
        return x


class GlobalGenerator(nn.Module):
    """Learned constant input grown by pairs of modulated 3x3 convs to (c, s, s)."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        if cfg.grid_size < 4 or cfg.grid_size & (cfg.grid_size - 1):
            raise ValueError("grid_size must be a power of two >= 4")
        ch = cfg.base_channels
        self.const = nn.Parameter(torch.randn(ch, 4, 4))
        convs = []
        res = 4
        while res < cfg.grid_size:
            convs.append(ModulatedConv2d(ch, ch, 3, cfg.latent_dim,
                                         demodulate=cfg.demodulate, up=True))
            convs.append(ModulatedConv2d(ch, ch, 3, cfg.latent_dim,
                                         demodulate=cfg.demodulate))
            res *= 2
        self.convs = nn.ModuleList(convs)
        self.to_codes = ModulatedConv2d(ch, cfg.grid_channels, 3, cfg.latent_dim,
                                        demodulate=cfg.demodulate)

    def forward(self, style: torch.Tensor) -> torch.Tensor:
        if style.dim() == 1:
            style = style.unsqueeze(0)
        x = self.const.unsqueeze(0).expand(style.shape[0], *self.const.shape)
        x = x.to(style.dtype)
        for conv in self.convs:
            x = F.leaky_relu(conv(x, style), LEAKY_SLOPE)
        return self.to_codes(x, style)  # (b, c, s, s), unactivated


class FieldNetwork(nn.Module):
    """Radiance field MLP whose every linear layer is modulated by the local code.

    Occupancy comes off the trunk before view direction enters, so sigma is
    independent of viewing direction by construction.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        pos_in = geometry.encoding_dim(3, cfg.pos_freqs)
        dir_in = geometry.encoding_dim(3, cfg.dir_freqs)
        width, c = cfg.field_width, cfg.grid_channels
        self.trunk = nn.ModuleList(
            [ModulatedLinear(pos_in, width, c, cfg.demodulate)] +
            [ModulatedLinear(width, width, c, cfg.demodulate)
             for _ in range(cfg.field_depth - 1)])
        self.sigma_head = EqualizedLinear(width, 1)
        self.feature = ModulatedLinear(width, width, c, cfg.demodulate)
        self.view_mix = ModulatedLinear(width + dir_in, width // 2, c, cfg.demodulate)
        self.appearance_head = EqualizedLinear(width // 2, cfg.feature_dim)

    def forward(self, p_enc: torch.Tensor, d_enc: torch.Tensor,
                w: torch.Tensor) -> RadianceSample:
        """p_enc/d_enc: (n, enc_dim) encoded local offsets and directions; w: (n, c)."""
        x = p_enc
        for layer in self.trunk:
            x = F.leaky_relu(layer(x, w), LEAKY_SLOPE)
        sigma = F.softplus(self.sigma_head(x)).squeeze(-1)
        h = self.feature(x, w)
        h = F.leaky_relu(self.view_mix(torch.cat([h, d_enc], dim=-1), w), LEAKY_SLOPE)
        return RadianceSample(sigma=sigma, appearance=self.appearance_head(h))


class EqualizedConvTranspose2d(nn.Module):
    """Stride-2 transposed conv with equalized scale, followed by a blur."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(in_ch, out_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = equalized_scale(in_ch * kernel * kernel)
        self.kernel = kernel

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.conv_transpose2d(x, self.weight * self.scale, self.bias, stride=2,
                               padding=self.kernel // 2, output_padding=1)
        return blur2d(y)


class RefinementBlock(nn.Module):
    """Upsample features 2x and merge an RGB skip path (absent on the first block)."""

    def __init__(self, in_ch: int, out_ch: int, first: bool):
        super().__init__()
        self.up = EqualizedConvTranspose2d(in_ch, out_ch)
        self.conv = EqualizedConv2d(out_ch, out_ch, 3)
        self.to_rgb = EqualizedConv2d(out_ch, 3, 3)
        self.first = first

    def forward(self, feat: torch.Tensor, rgb: torch.Tensor | None):
        feat = F.leaky_relu(self.up(feat), LEAKY_SLOPE)
        feat = F.leaky_relu(self.conv(feat), LEAKY_SLOPE)
        new_rgb = self.to_rgb(feat)
        if not self.first and rgb is not None:
            new_rgb = new_rgb + F.interpolate(rgb, scale_factor=2, mode="bilinear",
                                              align_corners=False)
        return feat, new_rgb


class RefinementNetwork(nn.Module):
    """Feature-path channels halve per block; final RGB is sigmoid-bounded."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        blocks = []
        ch = cfg.feature_dim
        for i in range(cfg.refinement_blocks):
            out_ch = max(ch // 2, 8)
            blocks.append(RefinementBlock(ch, out_ch, first=(i == 0)))
            ch = out_ch
        self.blocks = nn.ModuleList(blocks)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        rgb = None
        for block in self.blocks:
            feat, rgb = block(feat, rgb)
        return torch.sigmoid(rgb)


class SceneGenerator(nn.Module):
    """Full generator: mapping + global grid generator + field + refinement."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.mapping = MappingNetwork(cfg.latent_dim)
        self.global_gen = GlobalGenerator(cfg)
        self.field = FieldNetwork(cfg)
        self.refine = RefinementNetwork(cfg) if cfg.refinement_blocks else None

    # -- latent pipeline -----------------------------------------------------

    def map_latent(self, z: torch.Tensor) -> torch.Tensor:
        return self.mapping(z)

    def global_generate(self, style: torch.Tensor) -> torch.Tensor:
        return self.global_gen(style)

    def latent_grid(self, z: torch.Tensor) -> LatentGrid:
        """Latent grid for a single latent vector (no batch dim)."""
        codes = self.global_generate(self.map_latent(z.reshape(1, -1)))[0]
        return LatentGrid(codes=codes, layout=self.cfg.layout())

    # -- field conditioning --------------------------------------------------

    def field_fn(self):
        """Field callable for the renderer: conditions on the code grid per point.

        Local mode samples a per-point code bilinearly and feeds cell-local
        offsets; the global ablation pools one code for the whole scene and
        feeds extent-normalized world coordinates instead.
        """
        cfg = self.cfg
        layout = cfg.layout()

        def query_local(positions: torch.Tensor, directions: torch.Tensor,
                        codes: torch.Tensor) -> RadianceSample:
            uv = geometry.world_to_grid(positions, layout)
            w = geometry.bilinear_sample(codes, uv)
            p_enc = geometry.positional_encode(
                geometry.local_offset(positions, layout), cfg.pos_freqs)
            d_enc = geometry.positional_encode(directions, cfg.dir_freqs)
            return self.field(p_enc, d_enc, w)

        def query_global(positions: torch.Tensor, directions: torch.Tensor,
                         codes: torch.Tensor) -> RadianceSample:
            w = codes.mean(dim=(-2, -1)).expand(positions.shape[0], -1)
            p_norm = torch.stack(
                [positions[..., 0] / cfg.extent,
                 2.0 * positions[..., 1] / cfg.y_extent - 1.0,
                 positions[..., 2] / cfg.extent], dim=-1)
            p_enc = geometry.positional_encode(p_norm, cfg.pos_freqs)
            d_enc = geometry.positional_encode(directions, cfg.dir_freqs)
            return self.field(p_enc, d_enc, w)

        return query_local if cfg.conditioning == "local" else query_global

    def query_sigma(self, codes: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        """Occupancy at world positions, with a zero-encoded view direction."""
        out = self.field_fn()(positions, torch.zeros_like(positions), codes)
        return out.sigma

    # -- rendering -----------------------------------------------------------

    def render_scene(self, grid: LatentGrid, pose, intr, jitter: bool = False,
                     generator: torch.Generator | None = None):
        """Render (rgb, depth, opacity); rgb at output_res, depth at render_res."""
        cfg = self.cfg
        feat, depth, opacity = render_map(
            grid.codes, pose, intr, cfg.render_res, self.field_fn(),
            cfg.samples_per_ray, jitter=jitter, generator=generator)
        if self.refine is None:
            rgb = feat  # direct mode: raw volumetric render, no sigmoid
        else:
            rgb = self.refine(feat.unsqueeze(0))[0]
        return rgb, depth, opacity

    def generate_frame(self, z: torch.Tensor, pose, intr,
                       generator: torch.Generator | None = None):
        """End-to-end frame from a scene latent; deterministic (bin-center) sampling."""
        grid = self.latent_grid(z)
        return self.render_scene(grid, pose, intr, jitter=False, generator=generator)
