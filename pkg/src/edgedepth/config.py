"""Run configuration: dataclasses, presets and the flat ``section.key=value`` file format.

Example file::

    # desk run
    model.k=3
    model.encoder_widths=8,16,24,32,48
    schedule.lr_start=1e-3
    train.epochs=500
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import AugmentConfig
from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6


@dataclass
class ScheduleConfig:
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    cosine: bool = True


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    seed: int = 0
    max_steps: int = 0  # 0 = no cap beyond epochs


@dataclass
class EvalConfig:
    cap_min: float = 0.0
    cap_max: float = 10.0
    crop: str = "none"


@dataclass
class PathsConfig:
    data: str = "data"
    out: str = "runs/latest"
    train_split: str = "train"
    eval_split: str = "test"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    optim: AdamConfig = field(default_factory=AdamConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        if self.train.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.train.max_steps < 0:
            raise ConfigError("train.max_steps must be >= 0")
        if not (0 < self.optim.beta1 < 1 and 0 < self.optim.beta2 < 1):
            raise ConfigError("optim.beta1/beta2 must lie in (0, 1)")
        if self.optim.eps <= 0:
            raise ConfigError("optim.eps must be positive")
        if self.schedule.lr_start <= 0 or self.schedule.lr_end <= 0:
            raise ConfigError("schedule.lr_start/lr_end must be positive")
        if self.eval.cap_max <= max(self.eval.cap_min, 0.0):
            raise ConfigError("eval.cap_max must exceed eval.cap_min")
        if self.eval.crop not in ("none", "kitti", "eigen"):
            raise ConfigError("eval.crop must be none, kitti or eigen")
        return self


# Each preset is a list of overrides applied on top of the defaults.
PRESETS: dict[str, dict[str, str]] = {
    "desk": {
        "model.input_h": "64",
        "model.input_w": "64",
        "model.k": "3",
        "model.max_depth": "10",
        "model.fuse_scale": "1",
        "augment.preset": "synth",
        "augment.hflip_prob": "0",
        "schedule.lr_start": "1e-3",
        "schedule.lr_end": "1e-4",
        "train.epochs": "250",
        "train.batch_size": "2",
        "eval.cap_max": "10",
    },
    "nyu": {
        "model.input_h": "480",
        "model.input_w": "640",
        "model.k": "9",
        "model.max_depth": "10",
        "augment.preset": "nyu",
        "augment.brightness": "0.1",
        "augment.contrast": "0.1",
        "augment.color": "0.1",
        "eval.cap_max": "10",
        "eval.crop": "eigen",
    },
    "kitti": {
        "model.input_h": "352",
        "model.input_w": "1216",
        "model.k": "9",
        "model.max_depth": "80",
        "augment.preset": "kitti",
        "augment.brightness": "0.1",
        "augment.contrast": "0.1",
        "augment.color": "0.1",
        "eval.cap_max": "80",
        "eval.crop": "none",
    },
}


def _convert(raw: str, tp, key: str):
    raw = raw.strip()
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if typing.get_origin(tp) is tuple:
            inner = typing.get_args(tp)[0]
            return tuple(inner(v) for v in raw.replace("(", "").replace(")", "").split(",") if v.strip())
        if typing.get_origin(tp) in (typing.Union, types.UnionType):  # optional fields
            if raw.lower() in ("", "none"):
                return None
            return _convert(raw, [a for a in typing.get_args(tp) if a is not type(None)][0], key)
    except ValueError:
        raise ConfigError(f"config field {key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"config field {key}: unsupported type {tp}")


def _section_types(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Return a copy of ``cfg`` with ``section.field`` string overrides applied."""
    sections = {f.name: dataclasses.replace(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    pending: dict[str, dict[str, typing.Any]] = {name: {} for name in sections}
    for key, raw in overrides.items():
        if key.count(".") != 1:
            raise ConfigError(f"config field {key!r}: expected section.field")
        section, name = key.split(".")
        if section not in sections:
            raise ConfigError(f"config field {key}: unknown section {section!r}")
        hints = _section_types(type(sections[section]))
        if name not in hints:
            raise ConfigError(f"config field {key}: unknown field")
        pending[section][name] = _convert(raw, hints[name], key)
    try:
        built = {name: dataclasses.replace(obj, **pending[name]) for name, obj in sections.items()}
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(**built)


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(
    path: str | Path | None = None,
    preset: str | None = None,
    overrides: dict[str, str] | None = None,
) -> RunConfig:
    """Defaults, then preset, then file, then explicit overrides."""
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = apply_overrides(cfg, PRESETS[preset])
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        cfg = apply_overrides(cfg, parse_config_text(p.read_text()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def config_items(cfg: RunConfig) -> list[tuple[str, str]]:
    items = []
    for sec in dataclasses.fields(cfg):
        obj = getattr(cfg, sec.name)
        for f in dataclasses.fields(obj):
            items.append((f"{sec.name}.{f.name}", _format(getattr(obj, f.name))))
    return items


def dump_config(cfg: RunConfig) -> str:
    """Every resolved field as ``key=value`` lines; parsing the result reproduces ``cfg``."""
    return "\n".join(f"{k}={v}" for k, v in config_items(cfg)) + "\n"
