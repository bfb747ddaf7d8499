"""Report writers: delimited outputs plus matplotlib figures rendered to files."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib
import numpy as np
import torch
from PIL import Image

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .data import DEPTH_SCALE  # noqa: E402


def write_csv(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    fields = list(rows[0].keys())
    for row in rows[1:]:  # later rows may add columns (e.g. periodic metrics)
        fields.extend(k for k in row if k not in fields)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, restval="")
        writer.writeheader()
        writer.writerows(rows)


def write_json(path: str | Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))


def rgb_to_image(rgb: torch.Tensor | np.ndarray) -> Image.Image:
    arr = rgb.detach().cpu().numpy() if isinstance(rgb, torch.Tensor) else rgb
    arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    return Image.fromarray(arr.transpose(1, 2, 0))


def depth_to_image(depth: torch.Tensor | np.ndarray) -> Image.Image:
    arr = depth.detach().cpu().numpy() if isinstance(depth, torch.Tensor) else depth
    return Image.fromarray(
        np.clip(np.round(arr * DEPTH_SCALE), 0, 65535).astype(np.uint16))


def image_png_bytes(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def save_frame(rgb: torch.Tensor, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    rgb_to_image(rgb).save(path)


def save_loss_curves(history: list[dict], path: str | Path) -> None:
    """d/g loss and regularizer traces from the training metrics rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    steps = [row["step"] for row in history]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    axes[0].plot(steps, [r["d_loss"] for r in history], label="critic")
    axes[0].plot(steps, [r["g_loss"] for r in history], label="generator")
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[0].legend()
    axes[1].plot(steps, [r["recon"] for r in history], label="reconstruction")
    r1_steps = [(r["step"], r["r1"]) for r in history if r["r1"] > 0]
    if r1_steps:
        axes[1].plot(*zip(*r1_steps), ".", label="r1 (lazy)")
    if "fid_proxy" in history[-1]:
        rows = [(r["step"], r["fid_proxy"]) for r in history if "fid_proxy" in r
                and np.isfinite(r.get("fid_proxy", np.nan))]
        if rows:
            axes[1].plot(*zip(*rows), label="fid proxy")
    axes[1].set_xlabel("step")
    axes[1].set_yscale("log")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_rotation_sweep_figure(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["angle"] for r in rows], [r["fid_proxy"] for r in rows], "o-")
    ax.set_xlabel("grid rotation (degrees)")
    ax.set_ylabel("FID proxy vs unrotated")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_frame_strip(frames: list[torch.Tensor], path: str | Path,
                     title: str | None = None) -> None:
    """One row of frames, left to right."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(frames)
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 1.9))
    if n == 1:
        axes = [axes]
    for ax, frame in zip(axes, frames):
        ax.imshow(np.clip(frame.detach().cpu().numpy().transpose(1, 2, 0), 0, 1))
        ax.set_axis_off()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def floorplan_image(codes: torch.Tensor, upscale: int = 8) -> Image.Image:
    """3-component PCA projection of the code grid, for visualization."""
    c, s, _ = codes.shape
    flat = codes.detach().reshape(c, -1).T.numpy()  # (s*s, c)
    centered = flat - flat.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:3].T  # (s*s, 3)
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    proj = (proj - lo) / np.maximum(hi - lo, 1e-9)
    img = proj.reshape(s, s, 3)
    img8 = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    pil = Image.fromarray(img8)
    return pil.resize((s * upscale, s * upscale), Image.NEAREST)
