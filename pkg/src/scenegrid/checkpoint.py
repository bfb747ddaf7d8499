"""Versioned checkpoint archive with language-neutral key naming.

A checkpoint is a compressed .npz holding one float array per parameter and
a single JSON metadata entry under "__meta__". Parameter keys are
"<component>/<state-dict-name>" with components "generator", "ema",
"critic", "decoder"; the metadata records the format version, the full
generator/discriminator configurations, and the training step, so another
implementation can rebuild the networks from the arrays alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .discriminator import Critic, DiscriminatorConfig, ReconstructionDecoder
from .generator import GeneratorConfig, SceneGenerator

FORMAT_VERSION = 1


@dataclass
class CheckpointBundle:
    generator: SceneGenerator
    ema_generator: SceneGenerator | None
    critic: Critic | None
    decoder: ReconstructionDecoder | None
    meta: dict


def _pack(prefix: str, module: torch.nn.Module, arrays: dict):
    for name, tensor in module.state_dict().items():
        arrays[f"{prefix}/{name}"] = tensor.detach().cpu().numpy()


def _unpack(prefix: str, module: torch.nn.Module, npz):
    state = {}
    for name in module.state_dict():
        key = f"{prefix}/{name}"
        if key not in npz:
            raise ValueError(f"checkpoint missing parameter {key}")
        state[name] = torch.from_numpy(npz[key])
    module.load_state_dict(state)


def save_checkpoint(path: str | Path, generator: SceneGenerator,
                    ema_generator: SceneGenerator | None = None,
                    critic: Critic | None = None,
                    decoder: ReconstructionDecoder | None = None,
                    step: int = 0, extra: dict | None = None) -> None:
    arrays: dict = {}
    _pack("generator", generator, arrays)
    components = ["generator"]
    if ema_generator is not None:
        _pack("ema", ema_generator, arrays)
        components.append("ema")
    disc_cfg = None
    if critic is not None:
        _pack("critic", critic, arrays)
        components.append("critic")
        disc_cfg = asdict(critic.cfg)
    if decoder is not None:
        _pack("decoder", decoder, arrays)
        components.append("decoder")
    meta = {"format_version": FORMAT_VERSION,
            "generator_config": asdict(generator.cfg),
            "discriminator_config": disc_cfg,
            "components": components,
            "step": step}
    if extra:
        meta["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    npz = np.load(path, allow_pickle=False)
    if "__meta__" not in npz:
        raise ValueError(f"{path} is not a scenegrid checkpoint (no __meta__)")
    meta = json.loads(str(npz["__meta__"]))
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
    gen_cfg = GeneratorConfig(**meta["generator_config"])
    generator = SceneGenerator(gen_cfg)
    _unpack("generator", generator, npz)
    components = meta.get("components", ["generator"])

    ema = None
    if "ema" in components:
        ema = SceneGenerator(gen_cfg)
        _unpack("ema", ema, npz)
    critic = decoder = None
    if meta.get("discriminator_config"):
        disc_cfg = DiscriminatorConfig(**meta["discriminator_config"])
        if "critic" in components:
            critic = Critic(disc_cfg)
            _unpack("critic", critic, npz)
        if "decoder" in components:
            decoder = ReconstructionDecoder(disc_cfg)
            _unpack("decoder", decoder, npz)
    return CheckpointBundle(generator=generator, ema_generator=ema,
                            critic=critic, decoder=decoder, meta=meta)


def load_generator(path: str | Path, prefer_ema: bool = True) -> SceneGenerator:
    """The rendering-ready generator: EMA weights when present."""
    bundle = load_checkpoint(path)
    model = bundle.ema_generator if (prefer_ema and bundle.ema_generator) \
        else bundle.generator
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model
