"""Run configuration: defaults, TOML loading and flag overrides.

Schema (every key optional)::

    seed = 0                      # binary-test generator; eval suite base seed

    [matching]
    metric = "l2"                 # l2 | l1 | hamming

    [votespace]
    hue_max_diff = 60.0           # degrees

    [vote_image]
    bin_size = 4                  # pixels per cell
    smooth_radius = 1             # cells
    t_min = 1.5
    nms_radius = 2                # cells, Chebyshev
    max_props = 512

    [aggregation]
    gamma = 0.25                  # pass-1 radius / pattern diagonal
    shrink = 0.8                  # flood-fill bound scale

    [cascade]
    min_votes = 6
    min_adjacency_sum = 3.0
    max_scale_variance = 0.05
    max_rotation_variance = 0.0685389   # radians^2, (15 deg)^2
    binary_tests = 128
    max_hamming_norm = 0.25
    min_ncc = 0.3
    use_ncc = true
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .aggregation import DetectionConfig
from .cascade import CascadeConfig
from .features import METRICS

SECTIONS = {
    "matching": ("metric",),
    "votespace": ("hue_max_diff",),
    "vote_image": ("bin_size", "smooth_radius", "t_min", "nms_radius", "max_props"),
    "aggregation": ("gamma", "shrink"),
}
CASCADE_KEYS = tuple(f.name for f in dataclasses.fields(CascadeConfig) if f.name != "rng_seed")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    metric: str = "l2"
    hue_max_diff: float = 60.0
    bin_size: int = 4
    smooth_radius: int = 1
    t_min: float = 1.5
    nms_radius: int = 2
    max_props: int = 512
    gamma: float = 0.25
    shrink: float = 0.8
    cascade: CascadeConfig = field(default_factory=CascadeConfig)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.bin_size < 1 or self.smooth_radius < 0 or self.nms_radius < 0:
            raise ConfigError("bin_size >= 1, smooth_radius >= 0 and nms_radius >= 0 required")
        if self.t_min <= 0 or self.gamma <= 0 or not 0 < self.shrink <= 1:
            raise ConfigError("t_min > 0, gamma > 0 and 0 < shrink <= 1 required")
        self.cascade.rng_seed = self.seed

    def detection_config(self) -> DetectionConfig:
        return DetectionConfig(gamma=self.gamma, shrink=self.shrink, t_min=self.t_min,
                               smooth_radius=self.smooth_radius, cascade=self.cascade)

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for section, keys in SECTIONS.items():
            out[section] = {k: getattr(self, k) for k in keys}
        out["cascade"] = {k: getattr(self.cascade, k) for k in CASCADE_KEYS}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        kwargs = {}
        cascade_kwargs = {}
        for key, value in data.items():
            if key == "seed":
                kwargs["seed"] = int(value)
            elif key in SECTIONS:
                for k, v in value.items():
                    if k not in SECTIONS[key]:
                        raise ConfigError(f"unknown key [{key}] {k}")
                    kwargs[k] = v
            elif key == "cascade":
                for k, v in value.items():
                    if k not in CASCADE_KEYS:
                        raise ConfigError(f"unknown key [cascade] {k}")
                    cascade_kwargs[k] = v
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(cascade=CascadeConfig(**cascade_kwargs), **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **overrides) -> "RunConfig":
        values = {k: v for k, v in overrides.items() if v is not None}
        if not values:
            return self
        data = self.to_dict()
        for k, v in values.items():
            if k == "seed":
                data["seed"] = v
            elif k == "metric":
                data["matching"]["metric"] = v
            else:
                raise ConfigError(f"no override for {k!r}")
        return RunConfig.from_dict(data)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return RunConfig.from_dict(data)
