"""Forecast configuration and its key-value text form.

Config files are plain ``key = value`` lines; ``#`` starts a comment.
Booleans are ``true``/``false`` and ``none`` clears an optional value.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Optional

from .autodiff import ACTIVATIONS
from .errors import ConfigurationError


@dataclass
class ForecastConfig:
    horizon: int = 7
    target: str = "cases"
    window: int = 7
    d_e: int = 768
    d_t: int = 7
    heads: int = 4
    dgnn_hidden: int = 64
    rnn_hidden: int = 64
    dgnn_layers: int = 1
    learning_rate: float = 0.001
    batch_size: int = 4
    dropout: float = 0.5
    max_epochs: int = 300
    patience: int = 100
    validation_size: int = 5
    seed: int = 0
    drop_entity_entity_edges: bool = False
    drop_location_entity_edges: bool = False
    mean_pool_instead_of_birnn: bool = False
    bypass_dgnn: bool = False
    self_loops: bool = True
    combine: str = "concat"
    dgnn_activation: str = "elu"
    ffn_activation: str = "relu"
    leaky_slope: float = 0.2
    batch_norm: bool = True
    bn_momentum: float = 0.9
    grad_clip: Optional[float] = 5.0
    normalize: bool = False
    merge_eps: Optional[float] = None
    merge_min_pts: int = 1
    mobility_threshold: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    refit_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.window < 1:
            raise ConfigurationError("window must be >= 1")
        if self.target not in ("cases", "deaths"):
            raise ConfigurationError(f"target must be 'cases' or 'deaths', got {self.target!r}")
        for name in ("d_e", "heads", "dgnn_hidden", "rnn_hidden", "dgnn_layers", "batch_size",
                     "max_epochs", "validation_size", "merge_min_pts", "refit_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.d_t < 0:
            raise ConfigurationError("d_t must be >= 0")
        if self.bypass_dgnn and self.d_t < 1:
            raise ConfigurationError("bypass_dgnn needs d_t >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ConfigurationError("patience must lie in [0, max_epochs]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.combine not in ("concat", "sum"):
            raise ConfigurationError(f"combine must be 'concat' or 'sum', got {self.combine!r}")
        if self.dgnn_activation not in ("elu", "relu", "identity"):
            raise ConfigurationError(f"dgnn_activation must be elu, relu or identity, got {self.dgnn_activation!r}")
        if self.ffn_activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown ffn_activation {self.ffn_activation!r}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigurationError("leaky_slope must lie in (0, 1)")
        if self.merge_eps is not None and self.merge_eps <= 0:
            raise ConfigurationError("merge_eps must be positive (or none)")
        if self.grad_clip is not None and self.grad_clip < 0:
            raise ConfigurationError("grad_clip must be non-negative")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def rnn_output_width(self):
        return 2 * self.rnn_hidden if self.combine == "concat" else self.rnn_hidden

    def to_text(self):
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text, overrides=None):
        values = {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(known[key], value, lineno)
        values.update(overrides or {})
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def from_file(cls, path, overrides=None):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), overrides)


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(f, value, lineno):
    hint = str(f.type)
    low = value.lower()
    if "Optional" in hint and low == "none":
        return None
    try:
        if hint == "bool":
            if low not in ("true", "false"):
                raise ValueError(value)
            return low == "true"
        if hint == "int":
            return int(value)
        if "float" in hint:
            return float(value)
    except ValueError:
        raise ConfigurationError(f"config line {lineno}: bad value {value!r} for {f.name}") from None
    return value
