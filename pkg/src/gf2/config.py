"""Dataclass configuration tree with JSON file, env, and CLI override layers.

Precedence: config file < GF2_* environment variables < explicit overrides.
Env vars use double underscores for nesting (GF2_train__lr=0.002); override
keys are dotted (train.lr=0.002).  Values are coerced to the field's type.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import BadConfig


@dataclass
class SceneConfig:
    resolution: int = 32
    n_min: int = 1
    n_max: int = 4
    size_min: int = 3
    size_max: int = 9
    count: int = 2000
    val_count: int = 200
    seed: int = 0


@dataclass
class ModelConfig:
    resolution: int = 32
    num_classes: int = 4
    k_max: int = 6
    k_min: int = 1
    steps: int = 2  # recurrent planning steps T; 0 = single-pass mode
    d_z: int = 32
    d_u: int = 32
    d_w: int = 32
    att_dim: int = 32
    heads: int = 1
    planner_channels: list[int] = field(default_factory=lambda: [32, 32, 24, 16])
    executor_channels: list[int] = field(default_factory=lambda: [32, 32, 24, 16])
    disc_channels: list[int] = field(default_factory=lambda: [16, 24, 32])
    mapping_layers: int = 8
    mapping_lr_mul: float = 0.01
    gate_mode: str = "full"  # full | latents | layout | image | off
    gate_hidden: int = 8
    depth_head_dim: int = 16
    noise_inject: bool = True
    planner_noise_inject: bool = False
    upsample_mode: str = "nearest"  # config switch; bilinear not implemented
    count_mu: float = -1.0  # <0 means: fit from the dataset at startup
    count_sigma: float = -1.0
    style_mixing: bool = False


@dataclass
class TrainConfig:
    schedule: str = "paired"  # paired | unpaired | parallel
    loss_baseline: str = "sm"  # none | concat | edge | sm | vgg (unsupported)
    segment_fidelity: bool = True
    batch: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma_r1: float = 10.0
    r1_interval: int = 16
    ema_decay: float = 0.999
    noise_sigma: float = 0.2
    noise_fake: bool = True  # hierarchical noise on generated layouts too
    steps_plan: int = 2000
    steps_exec: int = 2000
    steps_joint: int = 1000
    lambda_adv: float = 1.0
    lambda_sm: float = 1.0
    lambda_sf: float = 1.0
    lambda_em: float = 1.0
    seed: int = 0
    log_every: int = 50


@dataclass
class Config:
    data: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _coerce(value: str, typ):
    if typ is bool:
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise BadConfig(f"cannot parse boolean from {value!r}")
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    if typ is str:
        return str(value)
    origin = getattr(typ, "__origin__", None)
    if origin is list:
        inner = typ.__args__[0]
        if isinstance(value, (list, tuple)):
            return [inner(v) for v in value]
        return [inner(v) for v in str(value).split(",") if v != ""]
    raise BadConfig(f"unsupported config field type {typ}")


def _field_types(dc_cls) -> dict:
    import typing

    hints = typing.get_type_hints(dc_cls)
    return {f.name: hints[f.name] for f in fields(dc_cls)}


def set_key(cfg: Config, dotted: str, value):
    parts = dotted.split(".")
    if len(parts) != 2:
        raise BadConfig(f"override key must look like section.field, got {dotted!r}")
    section, name = parts
    if not hasattr(cfg, section):
        raise BadConfig(f"unknown config section {section!r}")
    sub = getattr(cfg, section)
    types = _field_types(type(sub))
    if name not in types:
        raise BadConfig(f"unknown config key {dotted!r}")
    setattr(sub, name, _coerce(value, types[name]))


def from_dict(data: dict) -> Config:
    cfg = Config()
    for section in ("data", "model", "train"):
        for key, value in (data.get(section) or {}).items():
            sub = getattr(cfg, section)
            types = _field_types(type(sub))
            if key not in types:
                raise BadConfig(f"unknown config key {section}.{key}")
            setattr(sub, key, _coerce(value, types[key]))
    return cfg


def load(path=None, env=None, overrides=None) -> Config:
    """Assemble a Config from file, environment, and override list."""
    cfg = from_dict(json.loads(Path(path).read_text())) if path else Config()
    env = os.environ if env is None else env
    for key, value in sorted(env.items()):
        if key.startswith("GF2_") and "__" in key:
            dotted = key[len("GF2_"):].replace("__", ".")
            set_key(cfg, dotted, value)
    for item in overrides or []:
        if "=" not in item:
            raise BadConfig(f"override must look like key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        set_key(cfg, dotted, value)
    return cfg
