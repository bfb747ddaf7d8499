"""YAML config files over the training/generator/loss dataclasses.

Schema: top-level sections map onto the dataclasses field by field:

    preset: desk | paper          # starting point, optional (default desk)
    generator: {latent_dim: 64, grid_size: 16, ...}      # GeneratorConfig
    loss: {lr: 0.002, lambda_recon: 1000, ...}           # LossConfig
    augment: {enabled: true, translate_frac: 0.125, ...} # AugmentPolicy
    train: {trajectory_length: 16, softmin_temperature: 1.0, seed: 0}

Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import asdict, fields, replace
from pathlib import Path

import yaml

from .generator import GeneratorConfig
from .training import AugmentPolicy, LossConfig, TrainConfig

PRESETS = {
    "desk": TrainConfig.desk,
    "paper": lambda: TrainConfig(generator=GeneratorConfig.paper()),
}


def _apply(dc, overrides: dict, section: str):
    if not overrides:
        return dc
    valid = {f.name for f in fields(dc)}
    unknown = set(overrides) - valid
    if unknown:
        raise ValueError(f"unknown {section} config keys: {sorted(unknown)}")
    return replace(dc, **overrides)


def train_config_from_dict(raw: dict, preset: str | None = None) -> TrainConfig:
    raw = dict(raw or {})
    preset = raw.pop("preset", preset) or "desk"
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset]()
    gen = _apply(cfg.generator, raw.pop("generator", None), "generator")
    loss = _apply(cfg.loss, raw.pop("loss", None), "loss")
    aug = _apply(cfg.augment, raw.pop("augment", None), "augment")
    train_keys = raw.pop("train", None) or {}
    if raw:
        raise ValueError(f"unknown config sections: {sorted(raw)}")
    cfg = replace(cfg, generator=gen, loss=loss, augment=aug)
    return _apply(cfg, train_keys, "train")


def load_train_config(path: str | Path | None = None,
                      preset: str | None = None,
                      seed: int | None = None) -> TrainConfig:
    raw = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"config root must be a mapping, got {type(raw).__name__}")
    cfg = train_config_from_dict(raw, preset=preset)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def dump_train_config(cfg: TrainConfig) -> str:
    payload = {
        "generator": asdict(cfg.generator),
        "loss": asdict(cfg.loss),
        "augment": asdict(cfg.augment),
        "train": {"trajectory_length": cfg.trajectory_length,
                  "softmin_temperature": cfg.softmin_temperature,
                  "seed": cfg.seed},
    }
    return yaml.safe_dump(payload, sort_keys=False)
