"""Single JSON configuration shared by all commands."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .depthproc import DEFAULT_ERODE_RADIUS, DEFAULT_MISSING_TOL, L1_WEIGHT, EyeFilterParams
from .errors import BadConfig
from .fusion.model import HyperParams
from .normalization import NormParams
from .pipeline import FilterSpec


@dataclass
class Paths:
    face_model: str | None = None
    monitor: str | None = None
    extrinsics: str | None = None
    parameters: str | None = None


@dataclass
class DepthConfig:
    erode_radius: int = DEFAULT_ERODE_RADIUS
    missing_value: float = -1.0       # after equalization; raw maps use 0
    missing_tol: float = DEFAULT_MISSING_TOL
    l1_weight: float = L1_WEIGHT
    eye_filter: EyeFilterParams = field(default_factory=EyeFilterParams)
    patch_size: int = 5


@dataclass
class TrainingConfig:
    epochs_rgbdtr: int = 25
    epochs_gan: int = 100
    epochs_finetune: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0


@dataclass
class Config:
    paths: Paths = field(default_factory=Paths)
    norm: NormParams = field(default_factory=NormParams)
    depth: DepthConfig = field(default_factory=DepthConfig)
    hyper: HyperParams = field(default_factory=HyperParams)
    filters: FilterSpec = field(default_factory=FilterSpec)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def check_paths(self) -> None:
        missing = [f"{k}={v}" for k, v in asdict(self.paths).items()
                   if v is not None and not Path(v).exists()]
        if missing:
            raise BadConfig("referenced files do not exist: " + ", ".join(missing))


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise BadConfig(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise BadConfig(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"{where}: {exc}") from exc


def load_config(path=None, check_paths=True) -> Config:
    if path is None:
        return Config()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read config {path}: {exc}") from exc
    cfg = _build(Config, data, "config")
    if check_paths:
        cfg.check_paths()
    return cfg
