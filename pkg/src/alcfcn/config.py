"""Run configuration: nested dataclasses filled from a ``key = value`` text file.

Keys are dotted (``affinity.beta = 8``).  Precedence, lowest first: built-in
defaults, presets, explicit keys in the file, ``--override`` flags, ``--seed``.
``ALCFCN_OUTPUT_ROOT`` replaces ``output_dir`` unless a flag sets it.
"""
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str = "data"
    n_train: int = 200
    n_val: int = 40
    n_test: int = 50
    height: int = 64
    width: int = 96
    difficulty: str = "standard"
    seed: int = 0
    pseudo_dir: str = ""  # empty: full training uses ground-truth masks


@dataclass
class ModelConfig:
    preset: str = "toy"
    level_channels: Tuple[int, int, int] = (16, 32, 64)
    aff_level_channels: Tuple[int, int, int] = (16, 32, 64)
    aff_channels: int = 112
    output_stride: int = 4
    aff_init_gain: float = 0.005


@dataclass
class AffinityConfig:
    radius: int = 5
    include_self: bool = True
    beta: float = 8.0
    t: int = 8


@dataclass
class LossConfig:
    kind: str = "lcfcn"  # lcfcn | pl_fcn | fs
    split_weight: str = "count"  # count | one
    fs_window: int = 15
    fs_factor: float = 5.0


@dataclass
class OptimConfig:
    lr: float = 1e-4
    lrs: Tuple[float, ...] = (1e-4, 1e-5, 1e-6)
    epochs: int = 200
    patience: int = 10
    max_train_images: int = 0  # 0 = all


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    output_dir: str = "runs"
    overlays: int = 4
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    affinity: AffinityConfig = field(default_factory=AffinityConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def validate(self):
        if self.optim.patience < 1:
            raise ConfigError("optim.patience must be >= 1")
        if self.optim.epochs < 1:
            raise ConfigError("optim.epochs must be >= 1")
        if self.optim.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        if self.affinity.radius < 0 or self.affinity.t < 0:
            raise ConfigError("affinity.radius and affinity.t must be >= 0")
        if self.affinity.beta < 1:
            raise ConfigError("affinity.beta must be >= 1")
        if self.loss.kind not in ("lcfcn", "pl_fcn", "fs"):
            raise ConfigError(f"unknown loss.kind {self.loss.kind!r}")
        if self.loss.split_weight not in ("count", "one"):
            raise ConfigError(f"unknown loss.split_weight {self.loss.split_weight!r}")
        if self.model.output_stride != 4:
            raise ConfigError("model.output_stride is fixed at 4")
        if self.model.preset not in MODEL_PRESETS:
            raise ConfigError(f"unknown model.preset {self.model.preset!r}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


MODEL_PRESETS = {
    "toy": {"level_channels": (16, 32, 64), "aff_level_channels": (16, 32, 64), "aff_channels": 112},
    "paper": {"level_channels": (64, 128, 256), "aff_level_channels": (64, 128, 256), "aff_channels": 448},
}

RUN_PRESETS = {
    "desk": {},
    "paper": {"model.preset": "paper", "optim.epochs": "1000", "data.height": "256", "data.width": "455"},
}


def _coerce(value, current, name):
    text = value.strip()
    try:
        if isinstance(current, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
            kind = type(current[0]) if current else float
            return tuple(kind(p.strip()) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc
    return text


def set_key(cfg, key, value):
    parts = key.strip().split(".")
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p) or not dataclasses.is_dataclass(getattr(target, p)):
            raise ConfigError(f"unknown config section {key!r}")
        target = getattr(target, p)
    leaf = parts[-1]
    if not hasattr(target, leaf) or dataclasses.is_dataclass(getattr(target, leaf)):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, leaf, _coerce(value, getattr(target, leaf), key))
    if key == "model.preset":
        if value.strip() not in MODEL_PRESETS:
            raise ConfigError(f"unknown model.preset {value!r}")
        for k, v in MODEL_PRESETS[value.strip()].items():
            setattr(cfg.model, k, v)


def parse_lines(text, source="<config>"):
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def build_config(path=None, overrides=(), seed=None):
    cfg = RunConfig()
    pairs = []
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        pairs = parse_lines(text, str(path))
    over = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        over.append((k.strip(), v.strip()))
    presets = [v for k, v in pairs + over if k == "preset"]
    if presets:
        name = presets[-1]
        if name not in RUN_PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        cfg.preset = name
        for k, v in RUN_PRESETS[name].items():
            set_key(cfg, k, v)
    # model presets first so explicit width keys win
    for k, v in pairs + over:
        if k == "model.preset":
            set_key(cfg, k, v)
    for k, v in pairs + over:
        if k not in ("preset", "model.preset"):
            set_key(cfg, k, v)
    if seed is not None:
        cfg.seed = int(seed)
    env_root = os.environ.get("ALCFCN_OUTPUT_ROOT")
    if env_root and "output_dir" not in {k for k, _ in over}:
        cfg.output_dir = env_root
    return cfg.validate()


def dump_config(cfg):
    lines = []

    def walk(obj, prefix):
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(val):
                walk(val, key + ".")
            elif isinstance(val, tuple):
                lines.append(f"{key} = {','.join(str(v) for v in val)}")
            else:
                lines.append(f"{key} = {val}")

    walk(cfg, "")
    return "\n".join(lines) + "\n"
