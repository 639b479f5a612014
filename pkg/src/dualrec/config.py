"""Run configuration: defaults, flat ``key=value`` files and validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .encoder import ConfigError


@dataclass(frozen=True)
class RunConfig:
    n: int = 50
    d: int = 64
    layers: int = 2
    heads: int = 8
    dropout: float = 0.5
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    alpha: float = 0.5
    beta: float = 0.5
    epochs: int = 200
    seed: int = 0
    patience: int = 20

    def validate(self) -> "RunConfig":
        for name in ("n", "d", "layers", "heads", "batch_size", "epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.heads % 2:
            raise ConfigError(f"heads must be even, got {self.heads}")
        if self.n <= self.heads // 2:
            raise ConfigError(f"n={self.n} must exceed heads/2={self.heads // 2}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be positive and weight_decay non-negative")
        if not 0.0 <= self.alpha <= 1.0 or self.beta < 0:
            raise ConfigError(f"need alpha in [0, 1] and beta >= 0, got {self.alpha}, {self.beta}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        return self

    def with_overrides(self, **overrides) -> "RunConfig":
        known = {f.name for f in fields(self)}
        clean = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            clean[key] = _coerce(key, value, getattr(self, key))
        return replace(self, **clean)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    def as_dict(self) -> dict:
        return asdict(self)


def _coerce(key: str, value, default):
    try:
        return int(str(value)) if isinstance(default, int) else float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {no}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    base = RunConfig()
    if path is not None:
        base = base.with_overrides(**parse_config_text(Path(path).read_text(encoding="utf-8")))
    return base.with_overrides(**overrides).validate()
