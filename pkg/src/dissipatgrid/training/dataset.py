"""Sampled ``(x_k, x_{k+1}, u_k)`` tuples from randomly excited post-fault trajectories."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..gridsim.dynamics import swing_rhs
from ..gridsim.scenario import FaultScenario
from .config import RegionBounds, TrainConfig

DATASET_FORMAT = "dissipatgrid.dataset/1"


class EmptyDatasetError(ValueError):
    pass


@dataclass
class TrajectoryDataset:
    x: np.ndarray
    xn: np.ndarray
    u: np.ndarray
    dt: float
    bounds: RegionBounds
    n_angles: int
    seed: int = 0
    source: str = ""
    raw_count: int = 0

    def __post_init__(self):
        if not (self.x.shape == self.xn.shape and self.x.shape[0] == self.u.shape[0]):
            raise ValueError("tuple arrays disagree in length or state dimension")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def subset(self, idx) -> "TrajectoryDataset":
        return TrajectoryDataset(self.x[idx], self.xn[idx], self.u[idx], self.dt, self.bounds,
                                 self.n_angles, self.seed, self.source, self.raw_count)

    def split(self, fraction: float, seed: int):
        """Seeded (train, held-out) split."""
        perm = np.random.default_rng(seed).permutation(len(self))
        k = int(round(fraction * len(self)))
        return self.subset(np.sort(perm[k:])), self.subset(np.sort(perm[:k]))

    def header(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "n": self.n,
            "m": self.m,
            "n_angles": self.n_angles,
            "dt": self.dt,
            "bounds": {"omega": self.bounds.omega, "delta": self.bounds.delta},
            "seed": self.seed,
            "count": len(self),
            "raw_count": self.raw_count,
            "source": self.source,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps(self.header()) + "\n")
            for x, xn, u in zip(self.x.tolist(), self.xn.tolist(), self.u.tolist()):
                fh.write(json.dumps({"x": x, "xn": xn, "u": u}) + "\n")

    @classmethod
    def load(cls, path) -> "TrajectoryDataset":
        with open(path) as fh:
            first = fh.readline()
            if not first.strip():
                raise ValueError(f"{path}: empty dataset file (missing header)")
            h = json.loads(first)
            if h.get("format") != DATASET_FORMAT:
                raise ValueError(f"{path}: /format expected {DATASET_FORMAT!r}")
            rows = [json.loads(line) for line in fh if line.strip()]
        if len(rows) != h["count"]:
            raise ValueError(f"{path}: header count {h['count']} but {len(rows)} tuples")
        if not rows:
            raise EmptyDatasetError(f"{path}: dataset has no tuples")
        n, m = h["n"], h["m"]
        x = np.array([r["x"] for r in rows], dtype=float).reshape(-1, n)
        xn = np.array([r["xn"] for r in rows], dtype=float).reshape(-1, n)
        u = np.array([r["u"] for r in rows], dtype=float).reshape(-1, m)
        return cls(x, xn, u, h["dt"], RegionBounds(**h["bounds"]), h["n_angles"], h["seed"],
                   h.get("source", ""), h.get("raw_count", 0))


def in_region(x: np.ndarray, n_angles: int, bounds: RegionBounds) -> np.ndarray:
    x = np.atleast_2d(x)
    ok = np.all(np.isfinite(x), axis=1)
    ok &= np.max(np.abs(x[:, :n_angles]), axis=1, initial=0.0) <= bounds.delta
    ok &= np.max(np.abs(x[:, n_angles:]), axis=1, initial=0.0) <= bounds.omega
    return ok


def generate_dataset(scenario: FaultScenario, config: TrainConfig,
                     seed: int | None = None) -> TrajectoryDataset:
    """Simulate randomly excited post-fault trajectories and keep in-region tuples.

    All trajectories are integrated together as one batch. Initial states are
    uniform around the post-fault equilibrium; a fresh uniform input is drawn
    every sampling interval and held. Every ``record_stride``-th tuple of a
    trajectory is recorded; tuples whose ``x_k`` leaves the region are dropped.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    plant = scenario.plant_post
    net = scenario.networks["post-fault"]
    x_eq = scenario.equilibrium.x
    na, n, m = plant.n_angles, plant.n, plant.m
    T = config.n_trajectories
    steps = int(round(config.traj_length / config.dt))
    if T == 0 or steps == 0:
        raise EmptyDatasetError("no trajectories requested; widen the excitation or count")
    span = np.concatenate([np.full(na, config.init_delta_range), np.full(n - na, config.init_omega_range)])
    x = x_eq + rng.uniform(-1.0, 1.0, size=(T, n)) * span
    xs, xns, us = [], [], []
    raw = 0
    alive = np.ones(T, dtype=bool)
    for k in range(steps):
        u = rng.uniform(-config.u_range, config.u_range, size=(T, m))
        with np.errstate(all="ignore"):
            xn = x.copy()
            h = config.dt / config.substeps
            for _ in range(config.substeps):
                k1 = swing_rhs(xn, u, net, plant)
                k2 = swing_rhs(xn + 0.5 * h * k1, u, net, plant)
                k3 = swing_rhs(xn + 0.5 * h * k2, u, net, plant)
                k4 = swing_rhs(xn + h * k3, u, net, plant)
                xn = xn + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        alive &= np.all(np.isfinite(xn), axis=1)
        if k % config.record_stride == 0:
            raw += T
            keep = alive & in_region(x - x_eq, na, config.region)
            xs.append(x[keep] - x_eq)
            xns.append(xn[keep] - x_eq)
            us.append(u[keep])
        x = np.where(alive[:, None], xn, x)
    X = np.concatenate(xs) if xs else np.zeros((0, n))
    if X.shape[0] == 0:
        raise EmptyDatasetError("no tuples inside the region of interest; widen the excitation")
    return TrajectoryDataset(X, np.concatenate(xns), np.concatenate(us), config.dt, config.region, na,
                             seed, source=f"{scenario.name}:post-fault", raw_count=raw)
