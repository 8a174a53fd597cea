"""Run configuration: a JSON document mirroring :class:`RunConfig` field for field."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import ConfigurationError
from .window import Variant


@dataclass(frozen=True)
class RunConfig:
    # seconds, or "auto"/"slowest": full-model iteration time of the fastest/slowest device
    T_th: float | str
    beta: float = 0.6
    rounds: int = 100
    num_clients: int = 10
    dirichlet_alpha: float = 0.1
    seed: int = 0
    variant: Variant = Variant.FEDEL
    normalize_importance: bool = True
    aggregate_heads: bool = True
    rollback: bool = True
    # device speed factors, assigned to clients in order and cycled
    speed_factors: tuple[float, ...] = (1.0,)
    lr: float = 0.1
    local_iters: int = 10
    batch_size: int = 32
    hidden: tuple[int, ...] = (32, 32, 32, 32, 32, 32)
    bias: bool = True
    init_gain: float = 2.449489742783178  # He-uniform
    comm_time: float = 0.0
    dataset: dict = field(default_factory=lambda: {"kind": "gaussian_mixture"})
    timing: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "speed_factors", tuple(float(s) for s in self.speed_factors))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        self.validate()

    def validate(self) -> None:
        if isinstance(self.T_th, str):
            if self.T_th not in ("auto", "slowest"):
                raise ConfigurationError("T_th: expected seconds, \"auto\" or \"slowest\"")
        elif not self.T_th > 0:
            raise ConfigurationError("T_th: must be positive")
        checks = [
            ("beta", 0.0 <= self.beta <= 1.0, "must lie in [0, 1]"),
            ("rounds", self.rounds >= 0, "must be non-negative"),
            ("num_clients", self.num_clients >= 1, "must be at least 1"),
            ("dirichlet_alpha", self.dirichlet_alpha > 0, "must be positive"),
            ("speed_factors", bool(self.speed_factors) and min(self.speed_factors) > 0, "must be positive"),
            ("lr", self.lr > 0, "must be positive"),
            ("local_iters", self.local_iters >= 1, "must be at least 1"),
            ("batch_size", self.batch_size >= 1, "must be at least 1"),
            ("hidden", bool(self.hidden) and min(self.hidden) >= 1, "needs positive block widths"),
            ("comm_time", self.comm_time >= 0, "must be non-negative"),
            ("init_gain", self.init_gain > 0, "must be positive"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigurationError(f"{name}: {msg}")

    def client_speed(self, client_id: int) -> float:
        return self.speed_factors[client_id % len(self.speed_factors)]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        d["speed_factors"] = list(self.speed_factors)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigurationError("config must be a JSON object")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ConfigurationError(f"{unknown[0]}: unknown field")
        if "T_th" not in doc:
            raise ConfigurationError("T_th: missing required field")
        kwargs = {}
        for name, value in doc.items():
            kwargs[name] = _coerce(name, value)
        try:
            return cls(**kwargs)
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"variant: {exc}") from None


_TYPES = {
    "beta": float,
    "rounds": int,
    "num_clients": int,
    "dirichlet_alpha": float,
    "seed": int,
    "lr": float,
    "local_iters": int,
    "batch_size": int,
    "comm_time": float,
    "init_gain": float,
    "normalize_importance": bool,
    "aggregate_heads": bool,
    "rollback": bool,
}


def _coerce(name, value):
    if name == "T_th":
        if isinstance(value, str):
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError("T_th: expected a number of seconds, \"auto\" or \"slowest\"")
        return float(value)
    kind = _TYPES.get(name)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name}: expected true/false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{name}: expected an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{name}: expected a number")
        return float(value)
    if name in ("speed_factors", "hidden"):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigurationError(f"{name}: expected a list of numbers")
    if name in ("dataset", "timing", "ablation") and not isinstance(value, dict):
        raise ConfigurationError(f"{name}: expected an object")
    return value


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(doc, dict) and "FEDEL_SEED" in os.environ:
        try:
            doc["seed"] = int(os.environ["FEDEL_SEED"])
        except ValueError:
            raise ConfigurationError("FEDEL_SEED: expected an integer") from None
    return RunConfig.from_dict(doc)
