from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..gridsim.network import ConfigError

CONFIG_FORMAT = "dissipatgrid.config/1"


@dataclass
class RegionBounds:
    """Box ``|d_omega|_inf <= omega`` and ``|d_delta|_inf <= delta`` around the equilibrium."""

    omega: float = 0.1
    delta: float = math.pi

    def __post_init__(self):
        if not (self.omega > 0 and self.delta > 0):
            raise ConfigError("region bounds must be positive")


@dataclass
class UserCost:
    """``l(x, u) = a |d_omega|^2 + b |d_delta|^2 + c |u|^2``."""

    a: float = 1000.0
    b: float = 1.0
    c: float = 10.0

    def __post_init__(self):
        if min(self.a, self.b, self.c) < 0 or max(self.a, self.b, self.c) == 0:
            raise ConfigError("cost coefficients must be >= 0 and not all zero")


@dataclass
class TrainConfig:
    # data generation
    scenario: str = "scib_fault.json"
    n_trajectories: int = 2000
    traj_length: float = 1.0
    dt: float = 5e-4
    substeps: int = 5
    record_stride: int = 20
    u_range: float = 0.5
    init_delta_range: float = math.pi / 2
    init_omega_range: float = 0.05
    region: RegionBounds = field(default_factory=RegionBounds)
    holdout_fraction: float = 0.1
    # networks
    width: int = 128
    depth: int = 2
    eps_pd: float = 1e-3
    activation: str = "gelu"
    state_weighting: bool = True
    storage_gain: float | None = None  # None: 1 / dt (dt in seconds)
    # optimization
    epochs: int = 20
    batch_size: int = 512
    lr: float = 5e-4
    weight_decay: float = 1e-4
    weights: tuple[float, float, float, float] = (10.0, 5.0, 0.1, 0.001)
    eps_d: float = 1e-4
    eps_delta: float = 1e-3
    eps_sp: float = 1e-2
    cost: UserCost = field(default_factory=UserCost)
    shape_includes_uRu: bool = False
    seed: int = 0
    # verification
    n_probes: int = 10_000
    violation_threshold: float = 0.01
    settle_after: float = 5.0  # seconds after clearing by which |d_omega| <= 1e-3
    final_angle_tol: float | None = 0.05

    def __post_init__(self):
        if isinstance(self.region, dict):
            self.region = RegionBounds(**self.region)
        if isinstance(self.cost, dict):
            self.cost = UserCost(**self.cost)
        self.weights = tuple(float(w) for w in self.weights)
        self.validate()

    def validate(self) -> None:
        if len(self.weights) != 4:
            raise ConfigError("/weights: need four loss weights")
        w1, w2, w3, w4 = self.weights
        if not (w1 > 0 and w2 > 0 and w3 >= 0 and w4 >= 0):
            raise ConfigError("/weights: need w1 > 0, w2 > 0, w3 >= 0, w4 >= 0")
        for name in ("eps_d", "eps_delta", "eps_sp", "eps_pd", "lr", "dt", "traj_length"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"/{name}: must be positive")
        for name in ("epochs", "n_trajectories"):
            if getattr(self, name) < 0:
                raise ConfigError(f"/{name}: must be non-negative")
        for name in ("batch_size", "substeps", "record_stride", "width", "depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"/{name}: must be >= 1")
        if self.storage_gain is not None and self.storage_gain < 1.0:
            raise ConfigError("/storage_gain: must be >= 1 (or null for 1/dt)")
        if self.weight_decay < 0 or self.u_range < 0:
            raise ConfigError("/weight_decay and /u_range must be non-negative")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("/holdout_fraction: must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return {"format": CONFIG_FORMAT, **d}

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "TrainConfig":
        d = dict(d)
        fmt = d.pop("format", CONFIG_FORMAT)
        if fmt != CONFIG_FORMAT:
            raise ConfigError(f"/format: expected {CONFIG_FORMAT!r}, got {fmt!r}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"/{unknown[0]}: unknown configuration key")
        d.update(overrides)
        _check_types(d)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


_NULLABLE = {"storage_gain", "final_angle_tol"}


def _kind_ok(value, default) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if isinstance(default, int):
        return isinstance(value, int)
    if isinstance(default, float):
        return isinstance(value, (int, float))
    if isinstance(default, str):
        return isinstance(value, str)
    return True


def _check_types(d: dict) -> None:
    for f in fields(TrainConfig):
        if f.name not in d:
            continue
        v = d[f.name]
        if v is None and f.name in _NULLABLE:
            continue
        if f.name in ("region", "cost"):
            sub = RegionBounds if f.name == "region" else UserCost
            if not isinstance(v, (dict, sub)):
                raise ConfigError(f"/{f.name}: expected an object")
            for k, x in (v.items() if isinstance(v, dict) else ()):
                if isinstance(x, bool) or not isinstance(x, (int, float)):
                    raise ConfigError(f"/{f.name}/{k}: expected a number")
            continue
        if f.name == "weights":
            if not isinstance(v, (list, tuple)):
                raise ConfigError("/weights: expected an array")
            for i, x in enumerate(v):
                if isinstance(x, bool) or not isinstance(x, (int, float)):
                    raise ConfigError(f"/weights/{i}: expected a number")
            continue
        default = f.default if f.name not in _NULLABLE else 1.0
        if not _kind_ok(v, default):
            raise ConfigError(f"/{f.name}: expected {type(default).__name__}, got {type(v).__name__}")


def load_config(path, **overrides) -> TrainConfig:
    p = Path(path)
    if not p.exists():
        from importlib import resources

        p = Path(str(resources.files("dissipatgrid") / "configs" / str(path)))
        if not p.exists():
            raise ConfigError(f"config {path!r} not found")
    with open(p) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    return TrainConfig.from_dict(d, **overrides)
