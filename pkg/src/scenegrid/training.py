"""Adversarial training: losses, regularizers, augmentation, pose sampling.

The objective is the non-saturating logistic pairing: the critic minimizes
softplus(D(fake)) + softplus(-D(real)) plus an R1 gradient penalty (applied
lazily every r1_interval steps, scaled by the interval) and a reconstruction
penalty on real samples through the critic's decoder; the generator
minimizes softplus(-D(fake)). Camera poses for generated scenes are drawn
from dataset trajectories, reweighted by a softmin over the occupancy the
generator itself predicts at each candidate position.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import TrajectoryDataset
from .discriminator import (
    Critic,
    DiscriminatorConfig,
    ReconstructionDecoder,
    match_depth_resolution,
    normalize_depth,
)
from .generator import GeneratorConfig, LatentGrid, SceneGenerator
from .geometry import CameraPose, relative_pose


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class LossConfig:
    lambda_r1: float = 0.01
    lambda_recon: float = 1000.0
    r1_interval: int = 16
    ema_decay: float = 0.999
    lr: float = 0.002
    mapping_lr_mult: float = 0.01
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-8
    batch: int = 32

    def __post_init__(self):
        if self.r1_interval < 1:
            raise ValueError("r1_interval must be >= 1")
        for name in ("lambda_r1", "lambda_recon", "ema_decay", "lr",
                     "mapping_lr_mult", "rmsprop_alpha", "rmsprop_eps", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# ----------------------------------------------------------------------------
# Losses


def softplus_loss(u: torch.Tensor) -> torch.Tensor:
    """log(1 + exp(-u)), numerically stable for large |u|."""
    return F.softplus(-u)


def gan_step_losses(real: torch.Tensor, fake: torch.Tensor, critic):
    """(d_loss, g_loss) under the non-saturating pairing; batches pre-augmented."""
    fake_scores = critic(fake).score
    real_scores = critic(real).score
    d_loss = softplus_loss(-fake_scores).mean() + softplus_loss(real_scores).mean()
    g_loss = softplus_loss(fake_scores).mean()
    return d_loss, g_loss


def r1_penalty(critic, real: torch.Tensor) -> torch.Tensor:
    """Mean squared input-gradient norm of the critic over real samples."""
    x = real.detach().requires_grad_(True)
    scores = critic(x).score
    (grad,) = torch.autograd.grad(scores.sum(), x, create_graph=True)
    return grad.pow(2).reshape(grad.shape[0], -1).sum(dim=1).mean()


def reconstruction_penalty(real: torch.Tensor, critic, decoder,
                           lambda_recon: float) -> torch.Tensor:
    """lambda_recon * MSE between real RGB-D and its decoded reconstruction."""
    out = critic(real)
    recon = decoder(out.bottleneck)
    return lambda_recon * F.mse_loss(recon, real)


# ----------------------------------------------------------------------------
# Camera pose sampling


@dataclass
class PoseCandidateSet:
    poses: list[CameraPose]
    occupancies: np.ndarray  # (k,), sigma queried at each pose's position

    def __post_init__(self):
        if len(self.poses) == 0:
            raise ValueError("candidate set must be nonempty")
        occ = np.asarray(self.occupancies, dtype=np.float64).reshape(-1)
        if occ.shape[0] != len(self.poses):
            raise ValueError("one occupancy per pose required")
        if (occ < 0).any():
            raise ValueError("occupancies must be non-negative")
        self.occupancies = occ


def softmin_weights(occupancies: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """softmax(-occ / temperature); invariant to constant occupancy shifts."""
    x = -np.asarray(occupancies, dtype=np.float64) / temperature
    x = x - x.max()
    e = np.exp(x)
    return e / e.sum()


def sample_camera_pose(candidates: PoseCandidateSet, temperature: float = 1.0,
                       rng: np.random.Generator | None = None) -> CameraPose:
    rng = rng or np.random.default_rng()
    w = softmin_weights(candidates.occupancies, temperature)
    idx = rng.choice(len(w), p=w)
    return candidates.poses[idx]


def normalize_subsequence(traj: list[CameraPose]) -> list[CameraPose]:
    """Left-compose every pose with the inverse of the middle pose."""
    if len(traj) == 0:
        raise ValueError("trajectory must be nonempty")
    mid_inv = traj[len(traj) // 2].inverse()
    return [mid_inv.compose(p) for p in traj]


# ----------------------------------------------------------------------------
# Differentiable augmentation


@dataclass(frozen=True)
class AugmentPolicy:
    translate_frac: float = 0.125
    brightness: float = 0.2
    contrast: float = 0.25
    cutout_frac: float = 0.25
    enabled: bool = True

    @staticmethod
    def off() -> "AugmentPolicy":
        return AugmentPolicy(enabled=False)


@dataclass
class AugmentParams:
    shifts: np.ndarray  # (b, 2) integer pixel shifts (dy, dx)
    brightness: np.ndarray  # (b,)
    contrast: np.ndarray  # (b,)
    cutout_centers: np.ndarray  # (b, 2) or empty
    cutout_size: int


def sample_augment_params(policy: AugmentPolicy, batch: int, res: int,
                          rng: np.random.Generator) -> AugmentParams:
    max_shift = int(policy.translate_frac * res)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(batch, 2))
    brightness = rng.uniform(-policy.brightness, policy.brightness, size=batch)
    contrast = rng.uniform(1 - policy.contrast, 1 + policy.contrast, size=batch)
    cutout_size = int(policy.cutout_frac * res)
    centers = rng.integers(0, res, size=(batch, 2))
    return AugmentParams(shifts=shifts, brightness=brightness, contrast=contrast,
                         cutout_centers=centers, cutout_size=cutout_size)


def translate2d(x: torch.Tensor, dy: int, dx: int) -> torch.Tensor:
    """Integer shift with zero padding; differentiable in the pixel values."""
    h, w = x.shape[-2:]
    pad_t, pad_b = max(dy, 0), max(-dy, 0)
    pad_l, pad_r = max(dx, 0), max(-dx, 0)
    x = F.pad(x, (pad_l, pad_r, pad_t, pad_b))
    return x[..., pad_b:pad_b + h, pad_r:pad_r + w]


def apply_augment(batch: torch.Tensor, params: AugmentParams) -> torch.Tensor:
    """Translation and cutout hit all channels; color jitter spares depth."""
    out = []
    res = batch.shape[-1]
    for i in range(batch.shape[0]):
        x = translate2d(batch[i], int(params.shifts[i, 0]), int(params.shifts[i, 1]))
        rgb, rest = x[:3], x[3:]
        mean = rgb.mean()
        rgb = (rgb - mean) * float(params.contrast[i]) + mean + float(params.brightness[i])
        x = torch.cat([rgb, rest], dim=0)
        if params.cutout_size > 0:
            cy, cx = params.cutout_centers[i]
            half = params.cutout_size // 2
            mask = torch.ones(1, res, res, dtype=x.dtype, device=x.device)
            y0, y1 = max(int(cy) - half, 0), min(int(cy) + half, res)
            x0, x1 = max(int(cx) - half, 0), min(int(cx) + half, res)
            mask[:, y0:y1, x0:x1] = 0.0
            x = x * mask
        out.append(x)
    return torch.stack(out)


def augment(batch: torch.Tensor, policy: AugmentPolicy,
            rng: np.random.Generator) -> torch.Tensor:
    if not policy.enabled:
        return batch
    params = sample_augment_params(policy, batch.shape[0], batch.shape[-1], rng)
    return apply_augment(batch, params)


# ----------------------------------------------------------------------------
# Training loop


@dataclass(frozen=True)
class TrainConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    softmin_temperature: float = 1.0
    trajectory_length: int = 16
    seed: int = 0
    # depth ablation: pool both real and generated depth to this resolution
    # before the critic sees them (None = full resolution)
    depth_resolution: int | None = None

    @staticmethod
    def desk() -> "TrainConfig":
        return TrainConfig(generator=GeneratorConfig.desk(),
                           loss=LossConfig(batch=8))

    def discriminator(self) -> DiscriminatorConfig:
        res = self.generator.output_res
        base = 32 if res <= 32 else 64
        return DiscriminatorConfig(input_res=res, base_channels=base,
                                   max_channels=min(512, base * 8))


@dataclass
class TrainState:
    cfg: TrainConfig
    generator: SceneGenerator
    ema_generator: SceneGenerator
    critic: Critic
    decoder: ReconstructionDecoder
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: np.random.Generator
    torch_gen: torch.Generator
    step: int = 0
    history: list[dict] = field(default_factory=list)


def build_optimizers(generator: SceneGenerator, critic: Critic,
                     decoder: ReconstructionDecoder, loss_cfg: LossConfig):
    mapping_params = list(generator.mapping.parameters())
    mapping_ids = {id(p) for p in mapping_params}
    rest = [p for p in generator.parameters() if id(p) not in mapping_ids]
    opt_g = torch.optim.RMSprop(
        [{"params": rest, "lr": loss_cfg.lr},
         {"params": mapping_params, "lr": loss_cfg.lr * loss_cfg.mapping_lr_mult}],
        alpha=loss_cfg.rmsprop_alpha, eps=loss_cfg.rmsprop_eps)
    opt_d = torch.optim.RMSprop(
        list(critic.parameters()) + list(decoder.parameters()),
        lr=loss_cfg.lr, alpha=loss_cfg.rmsprop_alpha, eps=loss_cfg.rmsprop_eps)
    return opt_g, opt_d


def init_train_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    generator = SceneGenerator(cfg.generator)
    ema = copy.deepcopy(generator)
    for p in ema.parameters():
        p.requires_grad_(False)
    critic = Critic(cfg.discriminator())
    decoder = ReconstructionDecoder(cfg.discriminator())
    opt_g, opt_d = build_optimizers(generator, critic, decoder, cfg.loss)
    return TrainState(cfg=cfg, generator=generator, ema_generator=ema,
                      critic=critic, decoder=decoder, opt_g=opt_g, opt_d=opt_d,
                      rng=np.random.default_rng(cfg.seed),
                      torch_gen=torch.Generator().manual_seed(cfg.seed))


def update_ema(ema: SceneGenerator, generator: SceneGenerator, decay: float):
    with torch.no_grad():
        for p_ema, p in zip(ema.parameters(), generator.parameters()):
            p_ema.add_((p - p_ema) * (1.0 - decay))
        for b_ema, b in zip(ema.buffers(), generator.buffers()):
            b_ema.copy_(b)


def prepare_real_batch(ds: TrajectoryDataset, cfg: TrainConfig,
                       rng: np.random.Generator):
    """Random real RGB-D frames plus one candidate pose list per batch item.

    Real depth is down/up-sampled to carry no more detail than generated
    depth, then both are normalized by the dataset's [near, far].
    """
    intr = ds.intrinsics
    n = cfg.loss.batch
    frames = []
    for _ in range(n):
        seq = ds.sequences[rng.integers(len(ds.sequences))]
        frames.append(seq[rng.integers(len(seq))])
    rgb = torch.stack([torch.from_numpy(f.rgb).float() for f in frames])
    depth = torch.stack([torch.from_numpy(f.depth).float() for f in frames])
    depth = match_depth_resolution(depth.unsqueeze(1), cfg.generator.render_res)
    depth = normalize_depth(depth, intr.near, intr.far)
    real = torch.cat([rgb, depth], dim=1)

    candidates = []
    length = min(cfg.trajectory_length, min(len(s) for s in ds.sequences))
    for _ in range(n):
        seq = ds.sequences[rng.integers(len(ds.sequences))]
        start = int(rng.integers(0, len(seq) - length + 1))
        poses = normalize_subsequence([f.pose for f in seq[start:start + length]])
        candidates.append(poses)
    return real, candidates


def render_fake_batch(state: TrainState, candidate_poses: list[list[CameraPose]],
                      intr, jitter: bool = True):
    """Sample scenes, pick one occupancy-weighted pose each, render RGB-D."""
    cfg = state.cfg
    gcfg = cfg.generator
    n = len(candidate_poses)
    z = torch.randn(n, gcfg.latent_dim, generator=state.torch_gen)
    codes = state.generator.global_generate(state.generator.map_latent(z))
    rgbs, depths = [], []
    for i in range(n):
        poses = candidate_poses[i]
        positions = torch.tensor(np.stack([p.position() for p in poses]),
                                 dtype=torch.float32)
        with torch.no_grad():
            occ = state.generator.query_sigma(codes[i], positions).numpy()
        pose = sample_camera_pose(PoseCandidateSet(poses, occ),
                                  cfg.softmin_temperature, state.rng)
        grid = LatentGrid(codes[i], gcfg.layout())
        rgb, depth, _ = state.generator.render_scene(
            grid, pose, intr, jitter=jitter, generator=state.torch_gen)
        rgbs.append(rgb)
        depths.append(depth)
    rgb = torch.stack(rgbs)
    depth = torch.stack(depths).unsqueeze(1)
    if depth.shape[-1] != gcfg.output_res:
        depth = F.interpolate(depth, size=(gcfg.output_res, gcfg.output_res),
                              mode="bilinear", align_corners=False)
    depth = normalize_depth(depth, intr.near, intr.far)
    return torch.cat([rgb, depth], dim=1)


def train_step(state: TrainState, real: torch.Tensor,
               candidate_poses: list[list[CameraPose]], intr,
               update_critic: bool = True, update_generator: bool = True) -> dict:
    """One critic update and one generator update; returns scalar metrics."""
    cfg = state.cfg
    loss_cfg = cfg.loss

    fake = render_fake_batch(state, candidate_poses, intr)
    if cfg.depth_resolution is not None:
        from .discriminator import depth_ablation_filter
        real = torch.cat([real[:, :3],
                          depth_ablation_filter(real[:, 3:], cfg.depth_resolution)],
                         dim=1)
        fake = torch.cat([fake[:, :3],
                          depth_ablation_filter(fake[:, 3:], cfg.depth_resolution)],
                         dim=1)
    params = sample_augment_params(cfg.augment, real.shape[0], real.shape[-1],
                                   state.rng) if cfg.augment.enabled else None
    real_aug = apply_augment(real, params) if params else real
    fake_aug = apply_augment(fake, params) if params else fake

    # critic update
    d_gan = (softplus_loss(-state.critic(fake_aug.detach()).score).mean()
             + softplus_loss(state.critic(real_aug).score).mean())
    d_recon = reconstruction_penalty(real_aug, state.critic, state.decoder,
                                     loss_cfg.lambda_recon)
    r1_val = torch.tensor(0.0)
    d_loss = d_gan + d_recon
    if (state.step % loss_cfg.r1_interval) == 0:
        r1_val = r1_penalty(state.critic, real_aug)
        d_loss = d_loss + loss_cfg.lambda_r1 * loss_cfg.r1_interval * r1_val
    if update_critic:
        state.opt_d.zero_grad(set_to_none=True)
        d_loss.backward(retain_graph=True)
        state.opt_d.step()

    # generator update against the refreshed critic
    g_loss = softplus_loss(state.critic(fake_aug).score).mean()
    if update_generator:
        state.opt_g.zero_grad(set_to_none=True)
        g_loss.backward()
        state.opt_g.step()
        update_ema(state.ema_generator, state.generator, loss_cfg.ema_decay)

    metrics = {"step": state.step, "d_loss": d_loss.detach().item(),
               "g_loss": g_loss.detach().item(), "r1": r1_val.detach().item(),
               "recon": d_recon.detach().item()}
    if not all(np.isfinite(v) for v in metrics.values()):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}",
            diagnostics={"metrics": metrics,
                         "fake_stats": {"min": float(fake.min()),
                                        "max": float(fake.max())}})
    state.step += 1
    state.history.append(metrics)
    return metrics


def train_loop(state: TrainState, ds: TrajectoryDataset, steps: int,
               callback=None) -> list[dict]:
    """Run `steps` alternating updates; callback(state, metrics) per step."""
    intr = ds.intrinsics
    extent = ds.meta.get("extent")
    if extent is not None and abs(extent - state.cfg.generator.extent) > 1e-9:
        raise ValueError(
            f"dataset extent {extent} does not match generator extent "
            f"{state.cfg.generator.extent}")
    for _ in range(steps):
        real, candidates = prepare_real_batch(ds, state.cfg, state.rng)
        metrics = train_step(state, real, candidates, intr)
        if callback is not None:
            callback(state, metrics)
    return state.history
