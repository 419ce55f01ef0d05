"""Pipeline configuration: one JSON file drives every CLI command.

Unknown keys are rejected rather than ignored so typos fail loudly; every
field has a default matching the reference training recipe, so `{}` is a
valid config.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from .domain import DESCRIPTOR_COUNT, DESCRIPTOR_STRIDE, NUM_JOINTS
from .errors import ConfigError

DEFAULT_SIGMA = (0.5 * 1.65) ** 2  # half body height squared, meters^2


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _build(cls, data: dict, where: str):
    _check(isinstance(data, dict), f"{where} must be an object")
    names = {f.name for f in dc_fields(cls)}
    for key in data:
        _check(key in names, f"unknown key {where}.{key}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"bad {where}: {e}") from e


@dataclass(frozen=True)
class DescriptorConfig:
    stride: int = DESCRIPTOR_STRIDE
    count: int = DESCRIPTOR_COUNT
    sigma: float = DEFAULT_SIGMA
    motion_maps: int = 6      # feature images: current frame + (motion_maps-1) past
    map_stride: int = 2

    def __post_init__(self):
        _check(self.stride >= 1, "descriptor.stride must be >= 1")
        _check(self.count >= 1, "descriptor.count must be >= 1")
        _check(self.sigma > 0, "descriptor.sigma must be > 0")
        _check(self.motion_maps >= 1, "descriptor.motion_maps must be >= 1")
        _check(self.map_stride >= 1, "descriptor.map_stride must be >= 1")

    @property
    def flattened_length(self) -> int:
        return self.count * NUM_JOINTS * 3

    def to_dict(self) -> dict:
        return {"stride": self.stride, "count": self.count, "sigma": self.sigma,
                "motion_maps": self.motion_maps, "map_stride": self.map_stride}


@dataclass(frozen=True)
class TextureConfig:
    levels: int = 4
    channels: int = 16
    base_resolution: int = 256

    def __post_init__(self):
        _check(self.levels >= 1, "texture.levels must be >= 1")
        _check(self.channels >= 1, "texture.channels must be >= 1")
        _check(self.base_resolution >= 2 ** (self.levels - 1),
               "texture.base_resolution too small for level count")

    @property
    def total_channels(self) -> int:
        return self.levels * self.channels


@dataclass(frozen=True)
class LossWeights:
    feature_matching: float = 5.0
    perceptual: float = 10.0
    adversarial: float = 0.5


@dataclass(frozen=True)
class OptimConfig:
    lr_generator: float = 1e-4
    lr_discriminator: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 2

    def __post_init__(self):
        _check(self.lr_generator > 0 and self.lr_discriminator > 0,
               "learning rates must be positive")
        _check(self.batch_size >= 1, "optim.batch_size must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    render_steps: int = 2000
    early_stop_mse: float = 0.0        # 0 disables the early-MSE stop
    eval_every: int = 50
    log_every: int = 10
    coarse_epochs: int = 500
    coarse_lr: float = 1e-3
    coarse_batch: int = 8
    finetune_body_fraction: float = 0.25
    finetune_bg_iters: int = 100

    def __post_init__(self):
        _check(self.render_steps >= 1, "train.render_steps must be >= 1")
        _check(self.coarse_epochs >= 1, "train.coarse_epochs must be >= 1")
        _check(0 < self.finetune_body_fraction <= 1,
               "train.finetune_body_fraction must be in (0, 1]")


@dataclass(frozen=True)
class SimConfig:
    substeps: int = 4
    iterations: int = 12
    stretch_compliance: float = 0.0
    collision_margin: float = 0.005
    damping: float = 0.02
    strain_tol: float = 0.02
    coarse_spacing: float = 0.075
    target_spacing: float = 0.035
    body_radius_scale: float = 1.0

    def __post_init__(self):
        _check(self.substeps >= 1, "sim.substeps must be >= 1")
        _check(self.iterations >= 1, "sim.iterations must be >= 1")
        _check(self.collision_margin >= 0, "sim.collision_margin must be >= 0")
        _check(self.coarse_spacing > 0 and self.target_spacing > 0,
               "sim spacings must be positive")
        _check(self.body_radius_scale > 0, "sim.body_radius_scale must be > 0")


@dataclass(frozen=True)
class MotionConfig:
    style: str = "sway"
    num_frames: int = 56
    fps: float = 30.0

    def __post_init__(self):
        _check(self.style in ("sway", "step", "spin"),
               f"motion.style {self.style!r} not one of sway/step/spin")
        _check(self.num_frames >= 1, "motion.num_frames must be >= 1")
        _check(self.fps > 0, "motion.fps must be > 0")


@dataclass(frozen=True)
class PipelineConfig:
    dataset_dir: str = "dataset"
    out_dir: str = "out"
    resolution: tuple = (128, 128)      # (H, W)
    num_views: int = 2
    garment: str = "long_skirt"
    seed: int = 0
    motion_features: bool = True
    relayer: bool = False
    background_rgb: tuple = (0.85, 0.87, 0.90)
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    texture: TextureConfig = field(default_factory=TextureConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)

    def __post_init__(self):
        try:
            res = tuple(int(v) for v in self.resolution)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad resolution: {e}") from e
        _check(len(res) == 2, "resolution must be [H, W]")
        _check(all(v >= 32 and v % 32 == 0 for v in res),
               "resolution sides must be multiples of 32 (5 downsampling stages)")
        object.__setattr__(self, "resolution", res)
        _check(self.num_views >= 1, "num_views must be >= 1")
        _check(self.garment in ("long_skirt", "short_skirt", "dress"),
               f"garment {self.garment!r} unknown")
        try:
            rgb = tuple(float(v) for v in self.background_rgb)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad background_rgb: {e}") from e
        _check(len(rgb) == 3 and all(0.0 <= v <= 1.0 for v in rgb),
               "background_rgb must be three values in [0, 1]")
        object.__setattr__(self, "background_rgb", rgb)

    @property
    def descriptor_channels(self) -> int:
        maps = NUM_JOINTS * self.descriptor.motion_maps if self.motion_features else 0
        return self.texture.total_channels + maps

    def replace(self, **kw) -> "PipelineConfig":
        current = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        current.update(kw)
        return PipelineConfig(**current)


_SECTIONS = {
    "descriptor": DescriptorConfig,
    "texture": TextureConfig,
    "losses": LossWeights,
    "optim": OptimConfig,
    "train": TrainConfig,
    "sim": SimConfig,
    "motion": MotionConfig,
}

_SCALARS = {
    "dataset_dir": str,
    "out_dir": str,
    "resolution": (list, tuple),
    "num_views": int,
    "garment": str,
    "seed": int,
    "motion_features": bool,
    "relayer": bool,
    "background_rgb": (list, tuple),
}


def config_from_dict(data: dict) -> PipelineConfig:
    _check(isinstance(data, dict), "config root must be an object")
    kw = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kw[key] = _build(_SECTIONS[key], value, key)
        elif key in _SCALARS:
            _check(isinstance(value, _SCALARS[key]),
                   f"config key {key!r} has wrong type")
            kw[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return PipelineConfig(**kw)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    cfg = config_from_dict(data)
    if not math.isfinite(cfg.descriptor.sigma):
        raise ConfigError("descriptor.sigma must be finite")
    return cfg
