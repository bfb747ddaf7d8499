"""Camera math, ray generation, and latent-floorplan coordinate mapping.

Conventions (pinned by the test suite):
  - Right-handed world, y up. Cameras look along their own +z axis.
  - Camera rays for pixel (u, v) pass through (u + 0.5, v + 0.5) in pixel
    coordinates: d_cam = ((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1).
  - The latent grid lives on the zx-plane: grid axis 0 follows world z and
    grid axis 1 follows world x, with [-extent, extent] mapping linearly to
    [0, size - 1] (cell-center alignment: integer coordinates hit codes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

_ORTHO_TOL = 1e-6


# ----------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform [R | t]."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-5):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-5:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return CameraPose(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "CameraPose":
        R_inv = self.rotation.T
        return CameraPose(R_inv, -R_inv @ self.translation)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """self applied after other: returns self @ other as 4x4 transforms."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def position(self) -> np.ndarray:
        return self.translation.copy()


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics plus the ray integration bounds [near, far]."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")

    @staticmethod
    def from_fov(fov_deg: float, width: int, height: int, near: float, far: float) -> "Intrinsics":
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return Intrinsics(fx=f, fy=f, cx=width / 2, cy=height / 2,
                          width=width, height=height, near=near, far=far)

    def scaled(self, res_w: int, res_h: int) -> "Intrinsics":
        sx, sy = res_w / self.width, res_h / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                          res_w, res_h, self.near, self.far)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray  # (3,)
    direction: np.ndarray  # (3,), unit norm

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-5:
            raise ValueError("ray direction must be unit norm")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass
class RayGrid:
    """One ray per pixel; origins/directions indexed [v, u, xyz]."""

    origins: torch.Tensor  # (h, w, 3)
    directions: torch.Tensor  # (h, w, 3), unit norm

    def ray(self, v: int, u: int) -> Ray:
        return Ray(self.origins[v, u].numpy(), self.directions[v, u].numpy())


@dataclass(frozen=True)
class GridLayout:
    """Placement of the latent floorplan in world space.

    The grid covers [-extent, extent]^2 on the zx-plane; y_extent is the
    vertical span [0, y_extent] used to normalize heights into [-1, 1].
    """

    size: int = 32
    extent: float = 4.0
    y_extent: float = 2.5
    up_axis: str = field(default="y", init=False)

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("grid size must be >= 1")
        if self.extent <= 0 or self.y_extent <= 0:
            raise ValueError("extents must be positive")

    @property
    def cell_pitch(self) -> float:
        """World-unit spacing between adjacent code centers."""
        if self.size == 1:
            return 2.0 * self.extent
        return 2.0 * self.extent / (self.size - 1)


# ----------------------------------------------------------------------------
# Pose algebra


def relative_pose(reference: CameraPose, target: CameraPose) -> CameraPose:
    """Express target in the reference frame: reference^-1 composed with target."""
    return reference.inverse().compose(target)


def rotation_about_y(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotate_pose_about_y(pose: CameraPose, angle_rad: float) -> CameraPose:
    """Rotate a camera-to-world pose rigidly about the world y axis (origin-centered)."""
    R = rotation_about_y(angle_rad)
    return CameraPose(R @ pose.rotation, R @ pose.translation)


def upright_pose(position: np.ndarray, yaw: float) -> CameraPose:
    """Pose of an upright camera at `position` facing yaw (0 faces -z, y up in frame).

    The camera frame has +z forward and image rows scanning bottom to top, so
    rendered arrays written row 0 first come out right side up.
    """
    flip = np.diag([1.0, -1.0, -1.0])  # pi rotation about x; keeps det +1
    return CameraPose(rotation_about_y(yaw) @ flip, np.asarray(position, dtype=np.float64))


# ----------------------------------------------------------------------------
# Rays


def generate_rays(pose: CameraPose, intr: Intrinsics, res_w: int, res_h: int,
                  dtype: torch.dtype = torch.float32) -> RayGrid:
    """One unit-direction ray per pixel center, in world coordinates."""
    if res_w < 1 or res_h < 1:
        raise ValueError("resolution must be >= 1")
    k = intr if (res_w == intr.width and res_h == intr.height) else intr.scaled(res_w, res_h)
    u = (torch.arange(res_w, dtype=torch.float64) + 0.5 - k.cx) / k.fx
    v = (torch.arange(res_h, dtype=torch.float64) + 0.5 - k.cy) / k.fy
    vv, uu = torch.meshgrid(v, u, indexing="ij")
    dirs_cam = torch.stack([uu, vv, torch.ones_like(uu)], dim=-1)  # (h, w, 3)
    R = torch.from_numpy(pose.rotation)
    dirs = dirs_cam @ R.T
    dirs = dirs / dirs.norm(dim=-1, keepdim=True)
    origins = torch.from_numpy(pose.translation).expand(res_h, res_w, 3)
    return RayGrid(origins.to(dtype).contiguous(), dirs.to(dtype).contiguous())


# ----------------------------------------------------------------------------
# Positional encoding


def positional_encode(x: torch.Tensor, num_freqs: int, include_input: bool = True) -> torch.Tensor:
    """Per-component [sin(2^l pi x), cos(2^l pi x)] for l < num_freqs.

    Output dim = k * (include_input + 2 * num_freqs) over the last axis.
    """
    if num_freqs < 0:
        raise ValueError("num_freqs must be >= 0")
    parts = [x] if include_input else []
    for l in range(num_freqs):
        arg = (2.0 ** l) * math.pi * x
        parts.append(torch.sin(arg))
        parts.append(torch.cos(arg))
    if not parts:
        return x[..., :0]
    return torch.cat(parts, dim=-1)


def encoding_dim(k: int, num_freqs: int, include_input: bool = True) -> int:
    return k * (int(include_input) + 2 * num_freqs)


# ----------------------------------------------------------------------------
# World <-> grid mapping


def world_to_grid(p: torch.Tensor, layout: GridLayout) -> torch.Tensor:
    """Map world points (..., 3) to continuous grid coords (..., 2) = (u, v).

    u follows world z, v follows world x; y is discarded. Out-of-extent
    points map outside [0, size - 1] and are left unclamped.
    """
    scale = (layout.size - 1) / (2.0 * layout.extent) if layout.size > 1 else 0.0
    u = (p[..., 2] + layout.extent) * scale
    v = (p[..., 0] + layout.extent) * scale
    return torch.stack([u, v], dim=-1)


def local_offset(p: torch.Tensor, layout: GridLayout) -> torch.Tensor:
    """Express points (..., 3) in their containing cell's frame, components in [-1, 1].

    zx components are fractional offsets within the cell (0 at the code
    center, -1 at the -z/-x corner); y maps [0, y_extent] to [-1, 1]. Axes
    stay world-aligned: local frames are translation-only.
    """
    uv = world_to_grid(p, layout)
    cell = torch.floor(uv + 0.5)
    off = 2.0 * (uv - cell)  # (..., 2) in [-1, 1)
    y = 2.0 * p[..., 1] / layout.y_extent - 1.0
    return torch.stack([off[..., 1], y, off[..., 0]], dim=-1)  # world (x, y, z) order


def bilinear_sample(codes: torch.Tensor, uv: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample a (c, s, s) code grid at continuous coords (..., 2).

    Cell-center aligned: integer (u, v) returns codes[:, u, v] exactly.
    Coordinates outside [0, s - 1] clamp to the border.
    """
    c, s, s2 = codes.shape
    if s != s2:
        raise ValueError("code grid must be square")
    u = uv[..., 0].clamp(0.0, s - 1.0)
    v = uv[..., 1].clamp(0.0, s - 1.0)
    u0 = u.floor().clamp(max=max(s - 2, 0)).long()
    v0 = v.floor().clamp(max=max(s - 2, 0)).long()
    u1 = (u0 + 1).clamp(max=s - 1)
    v1 = (v0 + 1).clamp(max=s - 1)
    fu = (u - u0.to(u.dtype)).unsqueeze(-1)
    fv = (v - v0.to(v.dtype)).unsqueeze(-1)
    flat = codes.reshape(c, -1).T  # (s*s, c)
    c00 = flat[u0 * s + v0]
    c01 = flat[u0 * s + v1]
    c10 = flat[u1 * s + v0]
    c11 = flat[u1 * s + v1]
    top = c00 * (1 - fv) + c01 * fv
    bot = c10 * (1 - fv) + c11 * fv
    return top * (1 - fu) + bot * fu


# ----------------------------------------------------------------------------
# Rigid rearrangement of the code grid


def rotate_grid(codes: torch.Tensor, quarter_turns: int) -> torch.Tensor:
    """Rotate the (.., s, s) spatial layout by quarter turns; codes move unchanged.

    One positive quarter turn corresponds to rotating the represented scene
    by +90 degrees about world y (see rotate_grid_coords).
    """
    return torch.rot90(codes, quarter_turns % 4, dims=(-2, -1))


def mirror_grid(codes: torch.Tensor, axis: int) -> torch.Tensor:
    """Flip the code layout along grid axis 0 (z) or 1 (x)."""
    if axis not in (0, 1):
        raise ValueError("axis must be 0 (grid z) or 1 (grid x)")
    return torch.flip(codes, dims=(-2 + axis,))


def rotate_grid_coords(uv: torch.Tensor, quarter_turns: int, size: int) -> torch.Tensor:
    """Grid coords a scene rotation by quarter_turns * 90deg about y sends uv to.

    Sampling rotate_grid(codes, k) at rotate_grid_coords(uv, k, s) equals
    sampling codes at uv.
    """
    k = quarter_turns % 4
    m = (size - 1) / 2.0
    a = uv[..., 0] - m
    b = uv[..., 1] - m
    c = [1.0, 0.0, -1.0, 0.0][k]
    s = [0.0, 1.0, 0.0, -1.0][k]
    return torch.stack([c * a - s * b + m, s * a + c * b + m], dim=-1)


def mirror_grid_coords(uv: torch.Tensor, axis: int, size: int) -> torch.Tensor:
    """Coordinate map matching mirror_grid: reflected uv samples the moved codes."""
    out = uv.clone()
    out[..., axis] = (size - 1) - uv[..., axis]
    return out
