"""Run configuration: documented defaults, flat ``key = value`` files, overrides.

Precedence is command-line flag > config file > default.
"""

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .exceptions import InvalidConfig


@dataclass
class RunConfig:
    train: str = ""
    valid: str = ""
    test: str = ""
    output_dir: str = "cabkgc_run"
    checkpoint: str = ""
    seed: int = 0
    # model
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.0
    max_len: int = 72
    # context
    head_budget: int = 32
    relation_budget: int = 32
    inverse_context: bool = False
    # training
    batch_size: int = 16
    learning_rate: float = 5e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 200
    stabilization_patience: int = 3
    stabilization_decimals: int = 3
    valid_subsample: int = 0
    # evaluation
    protocol: str = "filtered"
    tie_policy: str = "pessimistic"
    split: str = "test"

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    def validate(self, need_paths=()):
        errors = []
        for name in need_paths:
            value = getattr(self, name)
            if not value:
                errors.append(f"{name}: required")
            elif not Path(value).exists():
                errors.append(f"{name}: no such file {value!r}")
        positive = ("d_model", "n_layers", "n_heads", "ff_dim", "batch_size", "max_epochs",
                    "stabilization_patience")
        for name in positive:
            if getattr(self, name) < 1:
                errors.append(f"{name}: must be >= 1")
        for name in ("head_budget", "relation_budget", "valid_subsample",
                     "stabilization_decimals"):
            if getattr(self, name) < 0:
                errors.append(f"{name}: must be >= 0")
        if self.max_len < 4:
            errors.append("max_len: must be >= 4")
        if self.d_model % max(self.n_heads, 1):
            errors.append("d_model: must be divisible by n_heads")
        if not self.learning_rate > 0:
            errors.append("learning_rate: must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            errors.append("dropout: must be in [0, 1)")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                errors.append(f"{name}: must be in [0, 1)")
        if self.protocol not in ("raw", "filtered"):
            errors.append("protocol: must be 'raw' or 'filtered'")
        if self.tie_policy not in ("pessimistic", "optimistic"):
            errors.append("tie_policy: must be 'pessimistic' or 'optimistic'")
        if self.split not in ("valid", "test"):
            errors.append("split: must be 'valid' or 'test'")
        if errors:
            raise InvalidConfig("; ".join(errors))
        return self


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(name, raw):
    """Convert a textual value to the type of field ``name``."""
    if name not in FIELD_TYPES:
        raise InvalidConfig(f"{name}: unknown config key")
    kind = FIELD_TYPES[name]
    if not isinstance(raw, str):
        return kind(raw)
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise InvalidConfig(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None
    return text


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    values = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            values[key] = coerce(key, value)
    return values


def resolve(config_file=None, overrides=None):
    """Merge defaults, an optional config file and explicit overrides."""
    merged = {}
    if config_file:
        merged.update(read_config_file(config_file))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = coerce(key, value)
    return RunConfig(**merged)
