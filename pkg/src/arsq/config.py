"""Training configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

from .envs import ENV_NAMES
from .losses import LossConfig
from .model import BACKBONE_SHARING, CONDITIONING_MODES


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env: str = "point_mass"
    bins_per_level: int = 7
    levels: int = 2
    alpha: float = 0.01
    gamma: float = 0.99
    tau: float = 0.005
    learning_rate: float = 3e-4
    weight_decay: float = 0.0
    batch_size: int = 64
    bc_margin: float = -1.0
    bc_weight: float = 1.0
    bc_variant: bool = False
    bc_on_success: bool = True
    bc_only: bool = False
    conditioning: str = "coarse_outer_dim_inner"
    backbone_sharing: str = "shared"
    backbone_widths: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    use_bias: bool = True
    rollout_net: str = "current"
    grad_steps_per_env_step: int = 1
    total_env_steps: int = 20_000
    offline_steps: int = 0
    eval_every: int = 2_000
    eval_episodes: int = 10
    buffer_capacity: int = 1_000_000
    seed: int = 0
    offline_data: str = ""
    demo_segment: str = ""
    demo_fraction: float = 0.3
    wall_clock: bool = True

    def __post_init__(self):
        self.backbone_widths = tuple(int(w) for w in self.backbone_widths)

    def validate(self) -> "TrainConfig":
        problems = []
        if self.env not in ENV_NAMES:
            problems.append(f"env must be one of {ENV_NAMES}")
        if self.bins_per_level < 2 or self.levels < 1:
            problems.append("bins_per_level must be >= 2 and levels >= 1")
        if self.alpha <= 0:
            problems.append("alpha must be positive")
        if not 0.0 <= self.gamma < 1.0:
            problems.append("gamma must lie in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            problems.append("tau must lie in [0, 1]")
        for name in ("learning_rate", "batch_size", "eval_every", "eval_episodes", "buffer_capacity"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        for name in ("weight_decay", "bc_weight", "total_env_steps", "offline_steps", "grad_steps_per_env_step"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.conditioning not in CONDITIONING_MODES:
            problems.append(f"conditioning must be one of {CONDITIONING_MODES}")
        if self.backbone_sharing not in BACKBONE_SHARING:
            problems.append(f"backbone_sharing must be one of {BACKBONE_SHARING}")
        if not self.backbone_widths or min(self.backbone_widths) <= 0:
            problems.append("backbone_widths must be a non-empty list of positive widths")
        if self.activation not in ("tanh", "silu_layernorm"):
            problems.append("activation must be tanh or silu_layernorm")
        if self.rollout_net not in ("current", "target"):
            problems.append("rollout_net must be current or target")
        if self.demo_segment not in ("", "top", "middle", "bottom"):
            problems.append("demo_segment must be empty, top, middle or bottom")
        if not 0.0 < self.demo_fraction <= 1.0:
            problems.append("demo_fraction must lie in (0, 1]")
        if self.total_env_steps == 0 and self.offline_steps == 0:
            problems.append("nothing to do: total_env_steps and offline_steps are both 0")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def loss_config(self) -> LossConfig:
        return LossConfig(self.gamma, self.alpha, self.bc_margin, self.bc_weight, self.bc_variant)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _parse_value(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind is float:
            return float(raw)
        if kind == tuple[int, ...]:
            return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return raw


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    hints = get_type_hints(TrainConfig)
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in hints:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(hints[key], raw, key)
    return dataclasses.replace(base or TrainConfig(), **values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def write_config(path, cfg: TrainConfig) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")
