"""Procedural toy rooms, an exact raycaster, and RGB-D trajectory storage.

Rooms are axis-aligned: a walled rectangular shell on a cell grid over
[-extent, extent]^2 (zx-plane), up to four interior wall segments, flat
per-segment colors, a floor at y=0 and a ceiling at y=ceiling_height. The
raycaster intersects rays against this geometry analytically (grid DDA on
the floorplan plus floor/ceiling planes), which makes it an independent
rendering oracle: no sampling, no learned parts.

On-disk layout (bit-exact contract):
    <root>/intrinsics.json
    <root>/meta.json
    <root>/<scene_id>/<seq_id>/rgb_%05d.png     8-bit RGB
    <root>/<scene_id>/<seq_id>/depth_%05d.png   16-bit grayscale, millimeters
    <root>/<scene_id>/<seq_id>/poses.json       16-float row-major c2w per frame
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .geometry import CameraPose, Intrinsics, generate_rays, upright_pose

DEPTH_SCALE = 1000.0  # stored depth unit: 1/1000 world unit


class DatasetFormatError(ValueError):
    """Raised when on-disk dataset files are missing or malformed."""


# ----------------------------------------------------------------------------
# Toy scenes


@dataclass
class ToyScene:
    occupancy: np.ndarray  # (n, n) bool; [i, j] covers z-cell i, x-cell j
    wall_colors: np.ndarray  # (n, n, 3) float in [0, 1]
    floor_color: np.ndarray  # (3,)
    ceiling_color: np.ndarray  # (3,)
    extent: float
    ceiling_height: float
    seed: int

    @property
    def n_cells(self) -> int:
        return self.occupancy.shape[0]

    @property
    def cell_size(self) -> float:
        return 2.0 * self.extent / self.n_cells

    def cell_of(self, position: np.ndarray) -> tuple[int, int]:
        w = self.cell_size
        i = int(np.floor((position[2] + self.extent) / w))
        j = int(np.floor((position[0] + self.extent) / w))
        return i, j

    def is_free(self, position: np.ndarray, margin: float = 0.0) -> bool:
        """True if the zx position (and a margin box around it) avoids walls."""
        n = self.n_cells
        for dz in (-margin, margin):
            for dx in (-margin, margin):
                p = position + np.array([dx, 0.0, dz])
                i, j = self.cell_of(p)
                if not (0 <= i < n and 0 <= j < n) or self.occupancy[i, j]:
                    return False
        return True

    def free_cells(self) -> np.ndarray:
        """(k, 2) indices of the largest connected free region (4-neighborhood)."""
        n = self.n_cells
        seen = np.zeros_like(self.occupancy)
        best: list[tuple[int, int]] = []
        for si in range(n):
            for sj in range(n):
                if self.occupancy[si, sj] or seen[si, sj]:
                    continue
                stack, comp = [(si, sj)], []
                seen[si, sj] = True
                while stack:
                    i, j = stack.pop()
                    comp.append((i, j))
                    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        a, b = i + di, j + dj
                        if 0 <= a < n and 0 <= b < n and not self.occupancy[a, b] \
                                and not seen[a, b]:
                            seen[a, b] = True
                            stack.append((a, b))
                if len(comp) > len(best):
                    best = comp
        return np.array(best)

    def params(self) -> dict:
        return {"seed": self.seed, "n_cells": self.n_cells, "extent": self.extent,
                "ceiling_height": self.ceiling_height}


def _rand_color(rng: np.random.Generator) -> np.ndarray:
    # Quantized to 8 bits so written PNGs round-trip the palette exactly.
    return rng.integers(40, 256, size=3).astype(np.float64) / 255.0


def generate_toy_scene(seed: int, n_cells: int = 16, extent: float = 4.0,
                       ceiling_height: float = 2.5) -> ToyScene:
    """Seeded random room: walled shell plus 0-4 interior wall segments."""
    rng = np.random.default_rng(seed)
    occ = np.zeros((n_cells, n_cells), dtype=bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    colors = np.zeros((n_cells, n_cells, 3))
    for sl, col in [((0, slice(None)), _rand_color(rng)),
                    ((-1, slice(None)), _rand_color(rng)),
                    ((slice(None), 0), _rand_color(rng)),
                    ((slice(None), -1), _rand_color(rng))]:
        colors[sl] = col

    n_segments = rng.choice(5, p=[0.05, 0.2, 0.25, 0.25, 0.25])
    for _ in range(n_segments):
        horizontal = rng.random() < 0.5
        line = int(rng.integers(3, n_cells - 3))
        start = int(rng.integers(1, n_cells // 2))
        length = int(rng.integers(2, n_cells - 2))
        col = _rand_color(rng)
        idx = slice(start, min(start + length, n_cells - 1))
        if horizontal:
            occ[line, idx] = True
            colors[line, idx] = col
        else:
            occ[idx, line] = True
            colors[idx, line] = col

    scene = ToyScene(occupancy=occ, wall_colors=colors,
                     floor_color=_rand_color(rng), ceiling_color=_rand_color(rng),
                     extent=extent, ceiling_height=ceiling_height, seed=seed)
    if len(scene.free_cells()) == 0:  # cannot happen with the bounds above
        raise RuntimeError("degenerate scene with no free space")
    return scene


# ----------------------------------------------------------------------------
# Exact raycasting


def raycast_rays(scene: ToyScene, origins: np.ndarray, dirs: np.ndarray):
    """First-hit depth and flat color for unit rays; exact plane/grid intersection."""
    n = scene.n_cells
    w = scene.cell_size
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n_rays = len(o)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(d[:, 1] < 0, -o[:, 1] / d[:, 1], np.inf)
        t_ceil = np.where(d[:, 1] > 0, (scene.ceiling_height - o[:, 1]) / d[:, 1], np.inf)
    t_vert = np.minimum(t_floor, t_ceil)
    vert_color = np.where((t_floor < t_ceil)[:, None], scene.floor_color,
                          scene.ceiling_color)

    pz = o[:, 2] + scene.extent
    px = o[:, 0] + scene.extent
    dz, dx = d[:, 2], d[:, 0]
    iz = np.clip(np.floor(pz / w).astype(np.int64), 0, n - 1)
    ix = np.clip(np.floor(px / w).astype(np.int64), 0, n - 1)
    step_z = np.where(dz > 0, 1, -1)
    step_x = np.where(dx > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tmax_z = np.where(dz != 0, ((iz + (dz > 0)) * w - pz) / dz, np.inf)
        tmax_x = np.where(dx != 0, ((ix + (dx > 0)) * w - px) / dx, np.inf)
        tdelta_z = np.where(dz != 0, w / np.abs(dz), np.inf)
        tdelta_x = np.where(dx != 0, w / np.abs(dx), np.inf)

    depth = np.full(n_rays, np.inf)
    color = np.zeros((n_rays, 3))
    hit = np.zeros(n_rays, dtype=bool)
    for _ in range(2 * n + 4):
        t_next = np.minimum(tmax_z, tmax_x)
        v_first = ~hit & (t_vert <= t_next)
        depth[v_first] = t_vert[v_first]
        color[v_first] = vert_color[v_first]
        hit |= v_first
        if hit.all():
            break
        adv = ~hit
        use_z = adv & (tmax_z <= tmax_x)
        use_x = adv & ~use_z
        t_cross = np.where(use_z, tmax_z, tmax_x)
        iz = np.where(use_z, iz + step_z, iz)
        tmax_z = np.where(use_z, tmax_z + tdelta_z, tmax_z)
        ix = np.where(use_x, ix + step_x, ix)
        tmax_x = np.where(use_x, tmax_x + tdelta_x, tmax_x)
        inside = (iz >= 0) & (iz < n) & (ix >= 0) & (ix < n)
        entered = adv & inside & scene.occupancy[np.clip(iz, 0, n - 1),
                                                 np.clip(ix, 0, n - 1)]
        depth[entered] = t_cross[entered]
        color[entered] = scene.wall_colors[iz[entered], ix[entered]]
        hit |= entered
        # leaving the grid without a wall hit cannot happen in a closed room,
        # but cap those rays at the vertical hit to stay total
        escaped = adv & ~inside
        depth[escaped] = t_vert[escaped]
        color[escaped] = vert_color[escaped]
        hit |= escaped
    return depth, color


@dataclass
class RgbdFrame:
    rgb: np.ndarray  # (3, h, w) in [0, 1]
    depth: np.ndarray  # (h, w), world units
    pose: CameraPose


def raycast_ground_truth(scene: ToyScene, pose: CameraPose, intr: Intrinsics,
                         res_w: int | None = None, res_h: int | None = None) -> RgbdFrame:
    """Exact RGB-D render; rejects camera positions inside walls."""
    pos = pose.position()
    if not (0.0 < pos[1] < scene.ceiling_height) or not scene.is_free(pos):
        raise ValueError("camera pose is inside a wall or outside the room")
    res_w = res_w or intr.width
    res_h = res_h or intr.height
    rays = generate_rays(pose, intr, res_w, res_h, dtype=torch.float64)
    origins = rays.origins.numpy().reshape(-1, 3)
    dirs = rays.directions.numpy().reshape(-1, 3)
    depth, color = raycast_rays(scene, origins, dirs)
    rgb = color.reshape(res_h, res_w, 3).transpose(2, 0, 1)
    return RgbdFrame(rgb=rgb, depth=depth.reshape(res_h, res_w), pose=pose)


# ----------------------------------------------------------------------------
# Random walks


def random_walk_trajectory(scene: ToyScene, n_steps: int, seed: int,
                           step_max: float = 0.6, turn_max: float = 0.6,
                           height: float = 1.2, margin: float = 0.15) -> list[CameraPose]:
    """Collision-avoiding walk with bounded step length and yaw change."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    cells = scene.free_cells()
    if len(cells) == 0:
        raise ValueError("scene has no free cells to start from")
    # start in a free cell whose margin box is clear
    for _ in range(200):
        i, j = cells[rng.integers(len(cells))]
        w = scene.cell_size
        pos = np.array([-scene.extent + (j + 0.5) * w, height,
                        -scene.extent + (i + 0.5) * w])
        if scene.is_free(pos, margin):
            break
    else:
        raise ValueError("no valid start cell")
    yaw = rng.uniform(0, 2 * math.pi)

    poses = [upright_pose(pos, yaw)]
    for _ in range(n_steps - 1):
        moved = False
        for _ in range(20):
            dyaw = rng.uniform(-turn_max, turn_max)
            dist = rng.uniform(0.3, 1.0) * step_max
            new_yaw = yaw + dyaw
            forward = np.array([-math.sin(new_yaw), 0.0, -math.cos(new_yaw)])
            cand = pos + dist * forward
            if scene.is_free(cand, margin):
                pos, yaw = cand, new_yaw
                moved = True
                break
        if not moved:  # blocked: rotate in place, still within the yaw bound
            yaw += turn_max if rng.random() < 0.5 else -turn_max
        poses.append(upright_pose(pos, yaw))
    return poses


# ----------------------------------------------------------------------------
# Trajectory dataset


@dataclass
class TrajectoryDataset:
    sequences: list[list[RgbdFrame]]
    intrinsics: Intrinsics
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(len(seq) == 0 for seq in self.sequences):
            raise ValueError("sequences must be nonempty")

    @property
    def sequence_ids(self) -> list[tuple[str, str]]:
        return [tuple(pair) for pair in self.meta.get("sequence_index", [])]


def generate_dataset(n_scenes: int, seqs_per_scene: int, steps: int, seed: int,
                     intr: Intrinsics, n_cells: int = 16, extent: float = 4.0,
                     ceiling_height: float = 2.5) -> TrajectoryDataset:
    """Raycast RGB-D trajectories over seeded toy scenes."""
    sequences, index, scene_params = [], [], []
    root_ss = np.random.SeedSequence(seed)
    scene_seeds = root_ss.generate_state(n_scenes * (seqs_per_scene + 1))
    k = 0
    for s in range(n_scenes):
        scene = generate_toy_scene(int(scene_seeds[k]), n_cells=n_cells,
                                   extent=extent, ceiling_height=ceiling_height)
        k += 1
        scene_params.append(scene.params())
        for q in range(seqs_per_scene):
            poses = random_walk_trajectory(scene, steps, int(scene_seeds[k]))
            k += 1
            frames = [raycast_ground_truth(scene, p, intr) for p in poses]
            sequences.append(frames)
            index.append([f"scene_{s:03d}", f"seq_{q:03d}"])
    meta = {"seed": seed, "scenes": scene_params, "sequence_index": index,
            "extent": extent, "ceiling_height": ceiling_height}
    return TrajectoryDataset(sequences=sequences, intrinsics=intr, meta=meta)


def write_dataset(ds: TrajectoryDataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    intr = ds.intrinsics
    (root / "intrinsics.json").write_text(json.dumps({
        "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
        "width": intr.width, "height": intr.height,
        "near": intr.near, "far": intr.far}, indent=1))
    (root / "meta.json").write_text(json.dumps(ds.meta, indent=1))
    ids = ds.sequence_ids or [(f"scene_000", f"seq_{i:03d}")
                              for i in range(len(ds.sequences))]
    for (scene_id, seq_id), frames in zip(ids, ds.sequences):
        seq_dir = root / scene_id / seq_id
        seq_dir.mkdir(parents=True, exist_ok=True)
        poses = []
        for i, frame in enumerate(frames):
            rgb8 = np.clip(np.round(frame.rgb * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(rgb8.transpose(1, 2, 0)).save(seq_dir / f"rgb_{i:05d}.png")
            d16 = np.clip(np.round(frame.depth * DEPTH_SCALE), 0, 65535).astype(np.uint16)
            Image.fromarray(d16).save(seq_dir / f"depth_{i:05d}.png")
            poses.append([float(x) for x in frame.pose.matrix().reshape(-1)])
        (seq_dir / "poses.json").write_text(json.dumps(poses))


def read_dataset(path: str | Path) -> TrajectoryDataset:
    root = Path(path)
    intr_file = root / "intrinsics.json"
    if not intr_file.exists():
        raise DatasetFormatError(f"missing intrinsics file: {intr_file}")
    try:
        raw = json.loads(intr_file.read_text())
        intr = Intrinsics(**raw)
    except (json.JSONDecodeError, TypeError, KeyError) as e:
        raise DatasetFormatError(f"malformed intrinsics in {intr_file}: {e}") from e
    meta = {}
    if (root / "meta.json").exists():
        meta = json.loads((root / "meta.json").read_text())

    sequences, index = [], []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for seq_dir in sorted(p for p in scene_dir.iterdir() if p.is_dir()):
            pose_file = seq_dir / "poses.json"
            if not pose_file.exists():
                raise DatasetFormatError(f"missing poses file: {pose_file}")
            try:
                mats = json.loads(pose_file.read_text())
                poses = [CameraPose.from_matrix(np.array(m).reshape(4, 4))
                         for m in mats]
            except (json.JSONDecodeError, ValueError) as e:
                raise DatasetFormatError(f"malformed poses in {pose_file}: {e}") from e
            frames = []
            for i, pose in enumerate(poses):
                rgb_file = seq_dir / f"rgb_{i:05d}.png"
                depth_file = seq_dir / f"depth_{i:05d}.png"
                if not rgb_file.exists() or not depth_file.exists():
                    raise DatasetFormatError(
                        f"frame {i} missing rgb or depth in {seq_dir}")
                rgb = np.asarray(Image.open(rgb_file), dtype=np.float64) / 255.0
                depth = np.asarray(Image.open(depth_file), dtype=np.float64) / DEPTH_SCALE
                frames.append(RgbdFrame(rgb=rgb.transpose(2, 0, 1), depth=depth,
                                        pose=pose))
            sequences.append(frames)
            index.append([scene_dir.name, seq_dir.name])
    if not sequences:
        raise DatasetFormatError(f"no sequences found under {root}")
    meta.setdefault("sequence_index", index)
    return TrajectoryDataset(sequences=sequences, intrinsics=intr, meta=meta)


def sample_subsequence(ds: TrajectoryDataset, length: int, seed: int):
    """Uniform random sequence and offset; poses normalized to the middle frame."""
    from .training import normalize_subsequence

    shortest = min(len(s) for s in ds.sequences)
    if length > shortest:
        raise ValueError(f"length {length} exceeds shortest sequence {shortest}")
    rng = np.random.default_rng(seed)
    seq = ds.sequences[rng.integers(len(ds.sequences))]
    start = int(rng.integers(0, len(seq) - length + 1))
    frames = seq[start:start + length]
    poses = normalize_subsequence([f.pose for f in frames])
    return frames, poses
