"""key=value configuration files with a published schema.

UTF-8 text, one ``key = value`` pair per line, ``#`` comments. Unknown
keys are rejected; absent keys take their defaults.
"""

from __future__ import annotations

import math

from .extraction import ClusterParams
from .raycast import RaydropParams
from .scorenet import ModelConfig, NoiseSchedule, SamplerConfig, TrainConfig
from .sensor import SensorSpec


class ConfigError(ValueError):
    pass


def _widths(text):
    return tuple(int(w) for w in text.split(","))


#: key -> (parser, default). The single source of truth for valid keys.
SCHEMA = {
    "sensor.rows": (int, 64),
    "sensor.cols": (int, 1024),
    "sensor.pitch_max_deg": (float, 2.0),
    "sensor.pitch_min_deg": (float, -24.8),
    "sensor.max_range": (float, 80.0),
    "sensor.origin_height": (float, 1.73),
    "schedule.sigma_max": (float, 1.0),
    "schedule.sigma_min": (float, 0.01),
    "schedule.levels": (int, 10),
    "sampler.eps0": (float, 2e-5),
    "sampler.steps_per_level": (int, 5),
    "model.in_channels": (int, 1),
    "model.cond_channels": (int, 2),
    "model.widths": (_widths, (16, 16, 32, 32)),
    "model.emb_dim": (int, 32),
    "model.blocks_per_level": (int, 2),
    "train.steps": (int, 1000),
    "train.lr": (float, 1e-3),
    "train.batch_size": (int, 8),
    "train.seed": (int, 0),
    "train.log_every": (int, 100),
    "train.checkpoint_every": (int, 0),
    "render.tessellation": (int, 32),
    "raydrop.p0": (float, 0.02),
    "raydrop.p1": (float, 0.08),
    "raydrop.p2": (float, 0.15),
    "cluster.car.eps": (float, 0.8),
    "cluster.car.min_pts": (int, 10),
    "cluster.vegetation.eps": (float, 1.5),
    "cluster.vegetation.min_pts": (int, 10),
    "cluster.building.eps": (float, 2.0),
    "cluster.building.min_pts": (int, 20),
}


class Config:
    """Validated key=value settings with typed accessors."""

    def __init__(self, values=None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        for key, val in (values or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            self.values[key] = val

    def __getitem__(self, key):
        return self.values[key]

    def sensor_spec(self) -> SensorSpec:
        return SensorSpec(
            rows=self["sensor.rows"],
            cols=self["sensor.cols"],
            pitch_max=math.radians(self["sensor.pitch_max_deg"]),
            pitch_min=math.radians(self["sensor.pitch_min_deg"]),
            max_range=self["sensor.max_range"],
            origin_height=self["sensor.origin_height"],
        )

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule(
            self["schedule.sigma_max"], self["schedule.sigma_min"], self["schedule.levels"]
        )

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self["sampler.eps0"], self["sampler.steps_per_level"])

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            in_channels=self["model.in_channels"],
            cond_channels=self["model.cond_channels"],
            widths=self["model.widths"],
            emb_dim=self["model.emb_dim"],
            blocks_per_level=self["model.blocks_per_level"],
        )

    def train_config(self, **overrides) -> TrainConfig:
        cfg = TrainConfig(
            steps=self["train.steps"],
            lr=self["train.lr"],
            batch_size=self["train.batch_size"],
            seed=self["train.seed"],
            log_every=self["train.log_every"],
            checkpoint_every=self["train.checkpoint_every"],
        )
        for key, val in overrides.items():
            setattr(cfg, key, val)
        return cfg

    def raydrop_params(self) -> RaydropParams:
        return RaydropParams(self["raydrop.p0"], self["raydrop.p1"], self["raydrop.p2"])

    def cluster_params(self, palette) -> dict:
        out = {}
        for lab in palette:
            eps_key = f"cluster.{lab.name}.eps"
            if eps_key in SCHEMA:
                out[lab.id] = ClusterParams(self[eps_key], self[f"cluster.{lab.name}.min_pts"])
        return out


def parse_config(text: str) -> Config:
    values = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {ln}: unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError:
            raise ConfigError(f"line {ln}: bad value {val!r} for {key}") from None
    return Config(values)


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
