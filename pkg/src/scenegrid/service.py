"""HTTP render service over a frozen model snapshot.

Scene handles are immutable: edits mint new handles, and a checkpoint reload
swaps the model snapshot atomically while in-flight requests keep the old
one. All rendering is deterministic (bin-center ray sampling, no hidden
RNG), so identical requests return byte-identical payloads.
"""

from __future__ import annotations

import base64
import io
import json
import secrets
import threading
from dataclasses import dataclass

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Query, Response
from pydantic import BaseModel

from .generator import LatentGrid, SceneGenerator
from .geometry import CameraPose, Intrinsics
from .inversion import ViewSet, invert_views, view_synthesis_eval
from .reports import depth_to_image, floorplan_image, image_png_bytes, rgb_to_image


@dataclass(frozen=True)
class SceneHandle:
    id: str
    grid: LatentGrid
    created_from: dict


class SceneRegistry:
    """Single-writer table of immutable scene handles plus the model snapshot."""

    def __init__(self, generator: SceneGenerator, intrinsics: Intrinsics):
        self._lock = threading.Lock()
        self._scenes: dict[str, SceneHandle] = {}
        self._generator = generator
        self.intrinsics = intrinsics

    @property
    def generator(self) -> SceneGenerator:
        return self._generator

    def swap_model(self, generator: SceneGenerator) -> None:
        with self._lock:
            self._generator = generator

    def register(self, grid: LatentGrid, created_from: dict) -> SceneHandle:
        handle = SceneHandle(id=secrets.token_hex(8), grid=grid,
                             created_from=created_from)
        with self._lock:
            self._scenes[handle.id] = handle
        return handle

    def get(self, scene_id: str) -> SceneHandle:
        with self._lock:
            handle = self._scenes.get(scene_id)
        if handle is None:
            raise KeyError(scene_id)
        return handle


def parse_pose(text: str) -> CameraPose:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 16:
        raise ValueError(f"pose needs 16 floats, got {len(parts)}")
    return CameraPose.from_matrix(np.array(parts).reshape(4, 4))


def pose_to_floats(pose: CameraPose) -> list[float]:
    return [float(x) for x in pose.matrix().reshape(-1)]


class CreateSceneRequest(BaseModel):
    seed: int | None = None
    z: list[float] | None = None


class EditRequest(BaseModel):
    op: str
    params: dict = {}


class InvertRequest(BaseModel):
    frames: list[str]  # base64 PNG payloads
    poses: list[list[float]]  # 16 floats each, row-major camera-to-world
    steps: int = 200


def build_app(registry: SceneRegistry) -> FastAPI:
    app = FastAPI(title="scenegrid render service")

    def lookup(scene_id: str) -> SceneHandle:
        try:
            return registry.get(scene_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown scene {scene_id}")

    @app.post("/scenes")
    def create_scene(req: CreateSceneRequest):
        generator = registry.generator
        d = generator.cfg.latent_dim
        if req.z is not None:
            if len(req.z) != d:
                raise HTTPException(status_code=422,
                                    detail=f"z must have {d} entries")
            z = torch.tensor(req.z, dtype=torch.float32)
            created = {"z": req.z}
        else:
            seed = req.seed if req.seed is not None else secrets.randbelow(2 ** 31)
            z = torch.randn(d, generator=torch.Generator().manual_seed(seed))
            created = {"seed": seed}
        with torch.no_grad():
            grid = generator.latent_grid(z)
        handle = registry.register(grid, created)
        return {"scene_id": handle.id}

    @app.get("/scenes/{scene_id}/render")
    def render(scene_id: str, pose: str, fov: float = 53.0,
               res: int = Query(default=0, ge=0, le=512), depth: bool = False):
        handle = lookup(scene_id)
        generator = registry.generator
        try:
            cam = parse_pose(pose)
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e))
        base = registry.intrinsics
        out_res = res or generator.cfg.output_res
        intr = Intrinsics.from_fov(fov, out_res, out_res, base.near, base.far)
        with torch.no_grad():
            rgb, depth_map, _ = generator.render_scene(handle.grid, cam, intr)
        if depth:
            image = depth_to_image(depth_map)
        else:
            image = rgb_to_image(rgb.clamp(0, 1))
            if image.size != (out_res, out_res):
                image = image.resize((out_res, out_res))
        return Response(content=image_png_bytes(image), media_type="image/png")

    @app.post("/scenes/{scene_id}/edit")
    def edit(scene_id: str, req: EditRequest):
        handle = lookup(scene_id)
        if req.op == "mirror":
            axis = int(req.params.get("axis", 1))
            if axis not in (0, 1):
                raise HTTPException(status_code=422, detail="axis must be 0 or 1")
            grid = handle.grid.mirrored(axis)
        elif req.op == "rotate":
            k = int(req.params.get("k", 1))
            grid = handle.grid.rotated(k)
        else:
            raise HTTPException(status_code=422, detail=f"unknown op {req.op!r}")
        new = registry.register(grid, {"edit": req.op, "params": req.params,
                                       "source": handle.id})
        return {"scene_id": new.id}

    @app.get("/scenes/{scene_id}/floorplan")
    def floorplan(scene_id: str):
        handle = lookup(scene_id)
        return Response(content=image_png_bytes(floorplan_image(handle.grid.codes)),
                        media_type="image/png")

    @app.get("/scenes/{scene_id}/interpolate/{other_id}")
    def interpolate(scene_id: str, other_id: str, t: float = 0.5):
        a, b = lookup(scene_id), lookup(other_id)
        codes = a.grid.codes * (1 - t) + b.grid.codes * t
        new = registry.register(LatentGrid(codes, a.grid.layout),
                                {"interpolate": [a.id, b.id], "t": t})
        return {"scene_id": new.id}

    @app.post("/invert")
    def invert(req: InvertRequest):
        from PIL import Image

        if len(req.frames) != len(req.poses) or not req.frames:
            raise HTTPException(status_code=422,
                                detail="need equal, nonzero frames and poses")
        images, poses = [], []
        for payload, mat in zip(req.frames, req.poses):
            if len(mat) != 16:
                raise HTTPException(status_code=422, detail="pose needs 16 floats")
            try:
                img = Image.open(io.BytesIO(base64.b64decode(payload)))
            except Exception as e:
                raise HTTPException(status_code=422, detail=f"bad frame: {e}")
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            images.append(torch.from_numpy(arr.transpose(2, 0, 1)))
            poses.append(CameraPose.from_matrix(np.array(mat).reshape(4, 4)))
        views = ViewSet(images=torch.stack(images), poses=poses)
        generator = registry.generator
        result, oriented = invert_views(views, generator, registry.intrinsics,
                                        encoder=None, steps=req.steps)
        handle = registry.register(result.refined_grid,
                                   {"inversion": {"views": len(poses),
                                                  "orientation": result.chosen_orientation}})
        return {"scene_id": handle.id,
                "metrics": {"final_loss": result.loss_trace[-1],
                            "orientation": result.chosen_orientation,
                            "diverged": result.diverged}}

    return app


def serve(registry: SceneRegistry, host: str = "127.0.0.1", port: int = 8000):
    import uvicorn

    uvicorn.run(build_app(registry), host=host, port=port)
