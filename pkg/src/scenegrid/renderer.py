"""Quadrature of the volumetric rendering integral along camera rays.

The discrete rule is the classic over-compositing one: per sample,
alpha_i = 1 - exp(-sigma_i * delta_i), transmittance T_i = prod_{k<i}
(1 - alpha_k), weight w_i = T_i * alpha_i. For piecewise-constant sigma
aligned with the sample segments the product telescopes and the quadrature
is exact, which the tests exploit as a closed-form oracle.

Fields are callables (positions, directions, codes) -> RadianceSample so
analytic test fields can stand in for the learned network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch

from .geometry import CameraPose, Intrinsics, Ray, generate_rays

DEPTH_EPS = 1e-6
BACKGROUND_OPACITY_EPS = 1e-3

FieldFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], "RadianceSample"]


@dataclass
class RadianceSample:
    """Field output at query points: occupancy sigma (...,) and appearance (..., F)."""

    sigma: torch.Tensor
    appearance: torch.Tensor


@dataclass
class RaySamples:
    """Quadrature nodes along rays; all tensors share leading batch dims.

    deltas[i] = depths[i+1] - depths[i], with the final segment running from
    the last depth to the far bound.
    """

    depths: torch.Tensor  # (..., n), increasing within [near, far]
    positions: torch.Tensor  # (..., n, 3)
    deltas: torch.Tensor  # (..., n)
    far: float


@dataclass
class RenderResult:
    color: torch.Tensor  # (..., F)
    depth: torch.Tensor  # (...,) expected termination depth, world units
    opacity: torch.Tensor  # (...,) accumulated weight in [0, 1]
    weights: torch.Tensor  # (..., n)


def sample_depths(near: float, far: float, n: int, jitter: bool = False,
                  batch_shape: tuple = (), generator: Optional[torch.Generator] = None,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """n uniform bins over [near, far]: centers, or one stratified draw per bin."""
    if n < 1:
        raise ValueError("need at least one sample")
    width = (far - near) / n
    edges = near + width * torch.arange(n, dtype=dtype)
    if jitter:
        u = torch.rand(*batch_shape, n, generator=generator, dtype=dtype)
    else:
        u = torch.full((*batch_shape, n), 0.5, dtype=dtype)
    return edges + u * width


def make_ray_samples(origins: torch.Tensor, directions: torch.Tensor,
                     depths: torch.Tensor, far: float) -> RaySamples:
    positions = origins.unsqueeze(-2) + directions.unsqueeze(-2) * depths.unsqueeze(-1)
    deltas = torch.cat([depths[..., 1:] - depths[..., :-1],
                        far - depths[..., -1:]], dim=-1)
    return RaySamples(depths=depths, positions=positions, deltas=deltas, far=far)


def sample_ray(ray: Ray, intr: Intrinsics, n: int, jitter: bool = False,
               generator: Optional[torch.Generator] = None,
               dtype: torch.dtype = torch.float32) -> RaySamples:
    depths = sample_depths(intr.near, intr.far, n, jitter, (), generator, dtype)
    o = torch.as_tensor(ray.origin, dtype=dtype)
    d = torch.as_tensor(ray.direction, dtype=dtype)
    return make_ray_samples(o, d, depths, intr.far)


def integrate(samples: RaySamples, field_outputs: RadianceSample) -> RenderResult:
    """Accumulate color, expected depth, and opacity from per-sample field outputs."""
    sigma = field_outputs.sigma
    appearance = field_outputs.appearance
    if torch.isnan(sigma).any():
        raise ValueError("sigma contains NaN")
    if (sigma < 0).any():
        raise ValueError("sigma must be non-negative")
    alpha = 1.0 - torch.exp(-sigma * samples.deltas)  # (..., n)
    trans = torch.cumprod(1.0 - alpha + 1e-12, dim=-1)
    trans = torch.cat([torch.ones_like(trans[..., :1]), trans[..., :-1]], dim=-1)
    weights = trans * alpha
    color = (weights.unsqueeze(-1) * appearance).sum(dim=-2)
    opacity = weights.sum(dim=-1)
    depth = (weights * samples.depths).sum(dim=-1) / opacity.clamp(min=DEPTH_EPS)
    depth = torch.where(opacity < BACKGROUND_OPACITY_EPS,
                        torch.full_like(depth, samples.far), depth)
    return RenderResult(color=color, depth=depth, opacity=opacity, weights=weights)


def render_map(W, pose: CameraPose, intr: Intrinsics, res: int, field: FieldFn,
               n_samples: int, jitter: bool = False,
               generator: Optional[torch.Generator] = None,
               chunk: int = 4096) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Render a feature map, depth map, and opacity map at res x res.

    W is a latent grid (or raw (c, s, s) code tensor) handed through to the
    field; the field owns all conditioning. Rays are chunked, which cannot
    change results because the field is pure per point.
    """
    codes = getattr(W, "codes", W)
    dtype = codes.dtype if isinstance(codes, torch.Tensor) else torch.float32
    rays = generate_rays(pose, intr, res, res, dtype=dtype)
    origins = rays.origins.reshape(-1, 3)
    dirs = rays.directions.reshape(-1, 3)
    n_rays = origins.shape[0]
    depths = sample_depths(intr.near, intr.far, n_samples, jitter, (n_rays,),
                           generator, dtype)

    colors, depth_out, opac = [], [], []
    for start in range(0, n_rays, max(chunk, 1)):
        sl = slice(start, min(start + max(chunk, 1), n_rays))
        samples = make_ray_samples(origins[sl], dirs[sl], depths[sl], intr.far)
        flat_p = samples.positions.reshape(-1, 3)
        flat_d = dirs[sl].unsqueeze(1).expand(-1, n_samples, 3).reshape(-1, 3)
        out = field(flat_p, flat_d, codes)
        result = integrate(samples, RadianceSample(
            sigma=out.sigma.reshape(-1, n_samples),
            appearance=out.appearance.reshape(-1, n_samples, out.appearance.shape[-1])))
        colors.append(result.color)
        depth_out.append(result.depth)
        opac.append(result.opacity)

    color = torch.cat(colors).reshape(res, res, -1).permute(2, 0, 1)
    depth = torch.cat(depth_out).reshape(res, res)
    opacity = torch.cat(opac).reshape(res, res)
    return color, depth, opacity
