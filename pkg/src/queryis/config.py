"""Run configuration: dataclass sections addressed by dotted keys.

Config files are plain ``section.key = value`` lines; ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .decoder import DecoderConfig
from .matcher import LossWeights
from .sampler import SamplerConfig
from .scene import GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    voxel_size: float = 0.05


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    power: float = 0.9
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    checkpoint_interval: int = 0
    threads: int = 1

    def validate(self):
        if self.iterations < 1:
            raise ConfigError("train.iterations must be >= 1")
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")


@dataclass
class InferConfig:
    tau: float = 0.5


@dataclass
class RunConfig:
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)

    def validate(self) -> "RunConfig":
        for f in dataclasses.fields(self):
            sec = getattr(self, f.name)
            if hasattr(sec, "validate"):
                try:
                    sec.validate()
                except ConfigError:
                    raise
                except ValueError as e:
                    raise ConfigError(f"{f.name}: {e}") from None
        if self.backbone.C != self.decoder.C:
            raise ConfigError(f"backbone.C={self.backbone.C} and decoder.C={self.decoder.C} must match")
        if self.scene.voxel_size <= 0:
            raise ConfigError("scene.voxel_size must be positive")
        return self

    # --- dotted access ---------------------------------------------------------

    def items(self) -> list[tuple[str, object]]:
        out = []
        for f in dataclasses.fields(self):
            sec = getattr(self, f.name)
            for g in dataclasses.fields(sec):
                out.append((f"{f.name}.{g.name}", getattr(sec, g.name)))
        return out

    def set(self, key: str, raw) -> None:
        section, _, name = key.partition(".")
        sec = getattr(self, section, None) if section in {f.name for f in dataclasses.fields(self)} else None
        if sec is None or name not in {g.name for g in dataclasses.fields(sec)}:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(sec, name)
        setattr(sec, name, _coerce(key, raw, current) if isinstance(raw, str) else raw)

    def copy(self) -> "RunConfig":
        return from_dict(to_dict(self))

    def dumps(self) -> str:
        return "\n".join(f"{k} = {_format(v)}" for k, v in self.items()) + "\n"


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            proto = current[0] if current else ""
            return tuple(_coerce(key, p, proto) for p in parts)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} (expected {type(current).__name__})") from None


def to_dict(cfg: RunConfig) -> dict:
    return dict(cfg.items())


def from_dict(d: dict) -> RunConfig:
    cfg = RunConfig()
    for k, v in d.items():
        cfg.set(k, tuple(v) if isinstance(v, list) else v)
    return cfg


def to_json(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True)


def from_json(text: str) -> RunConfig:
    return from_dict(json.loads(text))


def parse_lines(lines, cfg: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = cfg or RunConfig()
    for i, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{i}: expected 'key = value'")
        k, v = line.split("=", 1)
        try:
            cfg.set(k.strip(), v)
        except ConfigError as e:
            raise ConfigError(f"{source}:{i}: {e}") from None
    return cfg


def load(path, cfg: RunConfig | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_lines(p.read_text(encoding="utf-8").splitlines(), cfg, str(p))
