"""Scene completion by inversion: encoder init, orientation search, refinement.

A conv encoder turns posed views into per-pixel features that are
back-projected into a shared voxel volume; mean-pooling the volume over
height yields an initial code grid W0. Because generated scenes carry no
canonical heading, the source poses are tried at several global rotations
about y and scored by an auto-encoding perceptual distance; the winning W0
is then refined by SGD on a photometric loss against the source views with
the generator frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .generator import LatentGrid, SceneGenerator
from .geometry import CameraPose, GridLayout, Intrinsics, rotate_pose_about_y
from .renderer import render_map


@dataclass
class ViewSet:
    """Posed RGB observations; role marks source vs target splits."""

    images: torch.Tensor  # (v, 3, h, w) in [0, 1]
    poses: list[CameraPose]
    role: str = "source"

    def __post_init__(self):
        if self.images.dim() != 4 or self.images.shape[0] == 0:
            raise ValueError("need a nonempty (v, 3, h, w) image stack")
        if len(self.poses) != self.images.shape[0]:
            raise ValueError("one pose per view required")

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class FeatureVolume:
    values: torch.Tensor  # (c, sy, s, s); mean of per-view hits, zero where unseen
    counts: torch.Tensor  # (sy, s, s) view-hit counts


@dataclass
class InversionResult:
    initial_grid: LatentGrid
    refined_grid: LatentGrid
    chosen_orientation: int  # quarter turns applied to the source poses
    loss_trace: list[float]  # running best photometric loss, non-increasing
    diverged: bool = False


# ----------------------------------------------------------------------------
# Backprojection


def voxel_centers(layout: GridLayout, n_height: int,
                  y_range: tuple[float, float]) -> torch.Tensor:
    """(sy, s, s, 3) world positions; grid axes follow world z (i) and x (j)."""
    s = layout.size
    zs = torch.linspace(-layout.extent, layout.extent, s)
    xs = torch.linspace(-layout.extent, layout.extent, s)
    ys = torch.linspace(y_range[0], y_range[1], n_height)
    yy, ii, jj = torch.meshgrid(ys, zs, xs, indexing="ij")
    return torch.stack([jj, yy, ii], dim=-1)  # world (x, y, z)


def backproject(features: torch.Tensor, poses: list[CameraPose], intr: Intrinsics,
                layout: GridLayout, n_height: int | None = None,
                y_range: tuple[float, float] | None = None) -> FeatureVolume:
    """Mean of bilinearly sampled per-view features at each voxel's projection.

    features: (v, c, fh, fw); voxels behind a camera or projecting outside the
    frame receive no contribution from that view and stay zero if never hit.
    """
    v, c, fh, fw = features.shape
    n_height = n_height or layout.size
    y_range = y_range or (-layout.y_extent / 2, layout.y_extent / 2)
    centers = voxel_centers(layout, n_height, y_range).reshape(-1, 3)
    k = intr.scaled(fw, fh)
    acc = torch.zeros(centers.shape[0], c, dtype=features.dtype)
    counts = torch.zeros(centers.shape[0], dtype=features.dtype)
    for view in range(v):
        pose = poses[view]
        R = torch.from_numpy(pose.rotation).to(features.dtype)
        t = torch.from_numpy(pose.translation).to(features.dtype)
        cam = (centers - t) @ R  # R^T (p - t)
        z = cam[:, 2]
        u = k.fx * cam[:, 0] / z.clamp(min=1e-9) + k.cx
        vv = k.fy * cam[:, 1] / z.clamp(min=1e-9) + k.cy
        valid = (z > 1e-6) & (u >= 0) & (u <= fw) & (vv >= 0) & (vv <= fh)
        if not valid.any():
            continue
        # pixel-center aligned bilinear lookup of the feature map
        gx = (u[valid] - 0.5).clamp(0, fw - 1)
        gy = (vv[valid] - 0.5).clamp(0, fh - 1)
        x0 = gx.floor().clamp(max=fw - 2).long()
        y0 = gy.floor().clamp(max=fh - 2).long()
        fx_ = (gx - x0).unsqueeze(-1)
        fy_ = (gy - y0).unsqueeze(-1)
        fm = features[view].permute(1, 2, 0)  # (fh, fw, c)
        f00 = fm[y0, x0]
        f01 = fm[y0, x0 + 1]
        f10 = fm[y0 + 1, x0]
        f11 = fm[y0 + 1, x0 + 1]
        sample = ((f00 * (1 - fx_) + f01 * fx_) * (1 - fy_)
                  + (f10 * (1 - fx_) + f11 * fx_) * fy_)
        acc[valid] += sample
        counts[valid] += 1
    mean = acc / counts.clamp(min=1).unsqueeze(-1)
    s = layout.size
    return FeatureVolume(values=mean.T.reshape(c, n_height, s, s),
                         counts=counts.reshape(n_height, s, s))


# ----------------------------------------------------------------------------
# View encoder


class ViewEncoder(nn.Module):
    """Small U-shaped conv net mapping RGB views to c-channel feature maps."""

    def __init__(self, out_channels: int, width: int = 16):
        super().__init__()
        w = width
        self.down1 = nn.Conv2d(3, w, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(2 * w, 2 * w, 3, padding=1)
        self.up1 = nn.Conv2d(2 * w + w, w, 3, padding=1)
        self.up2 = nn.Conv2d(w + 3, w, 3, padding=1)
        self.head = nn.Conv2d(w, out_channels, 3, padding=1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x0 = images
        x1 = F.leaky_relu(self.down1(x0), 0.2)
        x2 = F.leaky_relu(self.down2(x1), 0.2)
        x2 = F.leaky_relu(self.mid(x2), 0.2)
        u1 = F.interpolate(x2, scale_factor=2, mode="bilinear", align_corners=False)
        u1 = F.leaky_relu(self.up1(torch.cat([u1, x1], dim=1)), 0.2)
        u2 = F.interpolate(u1, scale_factor=2, mode="bilinear", align_corners=False)
        u2 = F.leaky_relu(self.up2(torch.cat([u2, x0], dim=1)), 0.2)
        return self.head(u2)


def encode_views(views: ViewSet, encoder: ViewEncoder, intr: Intrinsics,
                 layout: GridLayout) -> torch.Tensor:
    """Per-view features -> voxel volume -> height-mean -> (c, s, s) code grid."""
    feats = encoder(views.images)
    volume = backproject(feats, views.poses, intr, layout)
    return volume.values.mean(dim=1)


def render_rgb(generator: SceneGenerator, codes: torch.Tensor,
               pose: CameraPose, intr: Intrinsics) -> torch.Tensor:
    """RGB at output_res through the full image path, bounded to [0, 1]."""
    grid = LatentGrid(codes, generator.cfg.layout())
    rgb, _, _ = generator.render_scene(grid, pose, intr)
    return rgb.clamp(0.0, 1.0)


def _match_res(images: torch.Tensor, res: int) -> torch.Tensor:
    return images if images.shape[-1] == res else F.adaptive_avg_pool2d(images, res)


def encoder_loss(w_true: torch.Tensor, views: ViewSet, encoder: ViewEncoder,
                 generator: SceneGenerator, intr: Intrinsics) -> torch.Tensor:
    """Latent-grid L2 plus rendered-view L2, both plain Euclidean norms."""
    layout = generator.cfg.layout()
    w0 = encode_views(views, encoder, intr, layout)
    latent_term = (w_true - w0).norm()
    renders = torch.stack([render_rgb(generator, w0, p, intr)
                           for p in views.poses])
    target = _match_res(views.images, renders.shape[-1])
    render_term = (renders - target).norm()
    return latent_term + render_term


# ----------------------------------------------------------------------------
# Orientation search


class RandomPerceptualDistance(nn.Module):
    """Multi-scale feature distance with fixed seeded random conv weights.

    Stands in for a learned perceptual metric at desk scale; any module with
    the same (x, y) -> scalar call signature can replace it.
    """

    def __init__(self, seed: int = 0, channels: tuple[int, ...] = (8, 16, 32)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        weights = []
        in_ch = 3
        for out_ch in channels:
            w = torch.randn(out_ch, in_ch, 3, 3, generator=gen) / math.sqrt(in_ch * 9)
            weights.append(nn.Parameter(w, requires_grad=False))
            in_ch = out_ch
        self.ws = nn.ParameterList(weights)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        dist = torch.zeros((), dtype=x.dtype)
        for w in self.ws:
            x = F.leaky_relu(F.conv2d(x, w.to(x.dtype), stride=2, padding=1), 0.2)
            y = F.leaky_relu(F.conv2d(y, w.to(y.dtype), stride=2, padding=1), 0.2)
            xn = x / (x.norm(dim=1, keepdim=True) + 1e-8)
            yn = y / (y.norm(dim=1, keepdim=True) + 1e-8)
            dist = dist + (xn - yn).pow(2).mean()
        return dist


def rotated_views(views: ViewSet, quarter_turns: int) -> ViewSet:
    """Same images, poses rigidly rotated about world y by quarter turns."""
    angle = math.radians(90.0 * quarter_turns)
    poses = [rotate_pose_about_y(p, angle) for p in views.poses]
    return ViewSet(images=views.images, poses=poses, role=views.role)


def orientation_search(views: ViewSet, encoder: ViewEncoder,
                       generator: SceneGenerator, intr: Intrinsics,
                       angles: tuple[int, ...] = (0, 1, 2, 3),
                       metric: nn.Module | None = None):
    """Pick the pose rotation whose auto-encoding looks most like the sources."""
    if len(angles) == 0:
        raise ValueError("need at least one candidate angle")
    metric = metric or RandomPerceptualDistance()
    layout = generator.cfg.layout()
    best = None
    with torch.no_grad():
        for quarter in angles:
            rv = rotated_views(views, quarter)
            w0 = encode_views(rv, encoder, intr, layout)
            renders = torch.stack([render_rgb(generator, w0, p, intr)
                                   for p in rv.poses])
            target = _match_res(rv.images, renders.shape[-1])
            score = float(metric(renders, target))
            if best is None or score < best[1]:
                best = (quarter, score, w0)
    return best[0], best[2]


# ----------------------------------------------------------------------------
# Gradient refinement


def refine_latents(w0: torch.Tensor, views: ViewSet, generator: SceneGenerator,
                   intr: Intrinsics, steps: int = 1000, lr: float = 0.1,
                   chosen_orientation: int = 0) -> InversionResult:
    """SGD on the code grid against source views; the generator stays frozen."""
    layout = generator.cfg.layout()
    target = _match_res(views.images, generator.cfg.output_res)

    w = w0.detach().clone().requires_grad_(True)
    opt = torch.optim.SGD([w], lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1))

    def photometric(w_cur):
        renders = torch.stack([render_rgb(generator, w_cur, p, intr)
                               for p in views.poses])
        return (renders - target).pow(2).mean()

    best_w = w.detach().clone()
    with torch.no_grad():
        initial = photometric(w).item()
    best_loss = initial
    trace = [initial]
    diverged = False
    for _ in range(steps):
        opt.zero_grad(set_to_none=True)
        loss = photometric(w)
        loss.backward()
        opt.step()
        sched.step()
        val = loss.item()
        if val < best_loss:
            best_loss = val
            best_w = w.detach().clone()
        trace.append(best_loss)
        if val > 10 * max(initial, 1e-12):
            import warnings
            warnings.warn(f"latent refinement diverged (loss {val:.3g} > 10x "
                          f"initial {initial:.3g}); returning best iterate")
            diverged = True
            break
    return InversionResult(
        initial_grid=LatentGrid(w0.detach().clone(), layout),
        refined_grid=LatentGrid(best_w, layout),
        chosen_orientation=chosen_orientation,
        loss_trace=trace, diverged=diverged)


def invert_views(views: ViewSet, generator: SceneGenerator, intr: Intrinsics,
                 encoder: ViewEncoder | None = None, steps: int = 1000,
                 lr: float = 0.1,
                 angles: tuple[int, ...] = (0, 1, 2, 3)) -> tuple[InversionResult, ViewSet]:
    """Full pipeline; returns the result plus the orientation-adjusted sources."""
    if encoder is not None:
        quarter, w0 = orientation_search(views, encoder, generator, intr,
                                         angles=angles)
        oriented = rotated_views(views, quarter)
    else:
        quarter = 0
        oriented = views
        cfg = generator.cfg
        w0 = torch.zeros(cfg.grid_channels, cfg.grid_size, cfg.grid_size)
    result = refine_latents(w0, oriented, generator, intr, steps=steps, lr=lr,
                            chosen_orientation=quarter)
    return result, oriented


# ----------------------------------------------------------------------------
# View synthesis protocol


def render_view_set(grid: LatentGrid, poses: list[CameraPose],
                    generator: SceneGenerator, intr: Intrinsics) -> torch.Tensor:
    with torch.no_grad():
        return torch.stack([render_rgb(generator, grid.codes, p, intr)
                            for p in poses])


def view_synthesis_eval(generator: SceneGenerator, source: ViewSet, target: ViewSet,
                        intr: Intrinsics, encoder: ViewEncoder | None = None,
                        steps: int = 1000, lr: float = 0.1) -> dict:
    """Invert on sources, render both splits, report per-split L1 and SSIM."""
    from .evaluation import l1 as l1_metric
    from .evaluation import ssim as ssim_metric

    result, oriented = invert_views(source, generator, intr, encoder=encoder,
                                    steps=steps, lr=lr)
    angle = math.radians(90.0 * result.chosen_orientation)
    target_poses = [rotate_pose_about_y(p, angle) for p in target.poses]

    def split_metrics(images: torch.Tensor, poses: list[CameraPose]) -> dict:
        renders = render_view_set(result.refined_grid, poses, generator, intr)
        ref = _match_res(images, renders.shape[-1])
        return {"l1": float(np.mean([l1_metric(r, t) for r, t in zip(renders, ref)])),
                "ssim": float(np.mean([ssim_metric(r, t)
                                       for r, t in zip(renders, ref)]))}

    return {"memorization": split_metrics(oriented.images, oriented.poses),
            "hallucination": split_metrics(target.images, target_poses),
            "chosen_orientation": result.chosen_orientation,
            "final_loss": result.loss_trace[-1],
            "_result": result}


# ----------------------------------------------------------------------------
# Encoder training on generator samples


def train_encoder(generator: SceneGenerator, encoder: ViewEncoder, intr: Intrinsics,
                  steps: int = 200, views_per_scene: int = 3, lr: float = 1e-3,
                  seed: int = 0) -> list[float]:
    """Fit the encoder on (views, poses, grid) tuples sampled from the generator."""
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(encoder.parameters(), lr=lr)
    cfg = generator.cfg
    losses = []
    for _ in range(steps):
        with torch.no_grad():
            z = torch.randn(cfg.latent_dim, generator=gen)
            grid = generator.latent_grid(z)
            poses = [random_interior_pose(cfg, rng) for _ in range(views_per_scene)]
            views = torch.stack([render_rgb(generator, grid.codes, p, intr)
                                 for p in poses])
        loss = encoder_loss(grid.codes.detach(), ViewSet(views, poses), encoder,
                            generator, intr)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses


def random_interior_pose(cfg, rng: np.random.Generator) -> CameraPose:
    """Upright camera near the grid center with a random yaw."""
    from .geometry import upright_pose

    pos = np.array([rng.uniform(-0.3, 0.3) * cfg.extent, 0.0,
                    rng.uniform(-0.3, 0.3) * cfg.extent])
    return upright_pose(pos, rng.uniform(0, 2 * math.pi))
