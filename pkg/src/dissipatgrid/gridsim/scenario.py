"""Fault scenarios and closed-loop simulation at fixed sampling with zero-order hold."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import (
    Equilibrium,
    IntegrationError,
    Plant,
    dispatch_equilibrium,
    find_equilibrium,
    plant_from_model,
    sample_step,
)
from .network import ConfigError, GridModel, ReducedNetwork, bundled_path, load_grid, reduce_to_sources

SCENARIO_FORMAT = "dissipatgrid.scenario/1"
PHASES = ("pre-fault", "fault-on", "post-fault")
DIVERGENCE_ANGLE = 10.0 * np.pi


@dataclass
class FaultScenario:
    """Pre-fault, fault-on (faulted bus grounded) and post-fault (branch tripped) phases.

    Boundaries belong to the later phase: the fault is on for
    ``t_fault <= t < t_clear``. Without a fault bus the scenario never leaves
    the pre-fault network.
    """

    grid: GridModel
    fault_bus: str | None = None
    trip_branch: str | None = None
    t_fault: float = 0.2
    t_clear: float = 0.43
    horizon: float = 8.0
    dt: float = 5e-4
    substeps: int = 5
    post_fault_dispatch: bool = False
    setpoint_overrides: dict[str, float] = field(default_factory=dict)
    name: str = "scenario"

    def __post_init__(self):
        if self.fault_bus is not None and not (0 < self.t_fault < self.t_clear < self.horizon):
            raise ConfigError("need 0 < t_fault < t_clear < horizon")
        if self.horizon <= 0 or self.dt <= 0 or self.substeps < 1:
            raise ConfigError("horizon, dt and substeps must be positive")

    @property
    def has_fault(self) -> bool:
        return self.fault_bus is not None

    @cached_property
    def _pre(self) -> tuple[Plant, np.ndarray]:
        return plant_from_model(self.grid)

    @property
    def plant_pre(self) -> Plant:
        return self._pre[0]

    @property
    def x0(self) -> np.ndarray:
        """Pre-fault operating point."""
        return self._pre[1].copy()

    @cached_property
    def post_grid(self) -> GridModel:
        return self.grid.without_branch(self.trip_branch) if self.trip_branch else self.grid

    @cached_property
    def networks(self) -> dict[str, ReducedNetwork]:
        pre = reduce_to_sources(self.grid)
        if not self.has_fault:
            return {p: pre for p in PHASES}
        return {
            "pre-fault": pre,
            "fault-on": reduce_to_sources(self.grid, grounded=(self.fault_bus,)),
            "post-fault": reduce_to_sources(self.post_grid),
        }

    @cached_property
    def _post(self) -> tuple[Plant, Equilibrium]:
        plant = self.plant_pre
        if self.setpoint_overrides:
            names = [s.name for s in self.grid.vsgs]
            p = plant.P_ref.copy()
            for nm, val in self.setpoint_overrides.items():
                if nm not in names:
                    raise ConfigError(f"set-point override for unknown VSG {nm!r}")
                p[names.index(nm)] = float(val)
            plant = plant.with_p_ref(p)
        net = self.networks["post-fault"]
        if self.post_fault_dispatch:
            return dispatch_equilibrium(net, plant, self.x0)
        return plant, find_equilibrium(net, plant, self.x0)

    @property
    def plant_post(self) -> Plant:
        return self._post[0]

    @property
    def equilibrium(self) -> Equilibrium:
        """Post-fault equilibrium (the origin of the controller's coordinates)."""
        return self._post[1]

    @property
    def n_samples(self) -> int:
        return int(round(self.horizon / self.dt))

    def phase_at(self, t: float) -> str:
        eps = 1e-9 * self.dt
        if not self.has_fault or t < self.t_fault - eps:
            return "pre-fault"
        if t < self.t_clear - eps:
            return "fault-on"
        return "post-fault"

    def plant_at(self, t: float) -> Plant:
        return self.plant_post if self.phase_at(t) == "post-fault" else self.plant_pre


def scenario_network(scenario: FaultScenario, t: float) -> ReducedNetwork:
    if not 0 <= t <= scenario.horizon + 1e-12:
        raise ValueError(f"t={t} outside [0, {scenario.horizon}]")
    return scenario.networks[scenario.phase_at(t)]


def load_scenario(path_or_name: str | Path, **overrides) -> FaultScenario:
    p = Path(path_or_name)
    if not p.exists():
        p = bundled_path(str(path_or_name))
        if not p.exists():
            raise ConfigError(f"scenario {path_or_name!r} not found")
    with open(p) as fh:
        d = json.load(fh)
    return scenario_from_dict(d, base_dir=p.parent, **overrides)


def scenario_from_dict(d: dict, base_dir: Path | None = None, **overrides) -> FaultScenario:
    if d.get("format") != SCENARIO_FORMAT:
        raise ConfigError(f"/format: expected {SCENARIO_FORMAT!r}, got {d.get('format')!r}")
    if "grid" not in d:
        raise ConfigError("/grid: missing grid model reference")
    grid_ref = Path(d["grid"])
    if base_dir is not None and not grid_ref.is_absolute() and (base_dir / grid_ref).exists():
        grid_ref = base_dir / grid_ref
    kw = {k: d[k] for k in ("fault_bus", "trip_branch", "t_fault", "t_clear", "horizon", "dt",
                            "substeps", "post_fault_dispatch", "setpoint_overrides", "name") if k in d}
    kw.update(overrides)
    return FaultScenario(grid=load_grid(grid_ref), **kw)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # states (angles relative to the reference machine, omegas)
    u: np.ndarray  # input applied from each sampling instant on
    x_eq: np.ndarray
    n_angles: int
    diverged: bool = False
    diverged_at: float | None = None
    diverged_phase: str | None = None
    t_clear: float | None = None

    @property
    def dx(self) -> np.ndarray:
        """States relative to the post-fault equilibrium."""
        return self.x - self.x_eq

    def to_csv(self, path) -> None:
        na = self.n_angles
        k = self.x.shape[1] - na
        header = (["t"] + [f"delta_{i + 1}" for i in range(na)] + [f"omega_{i + 1}" for i in range(k)]
                  + [f"u_{i + 1}" for i in range(self.u.shape[1])])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in np.column_stack([self.t, self.x, self.u]):
                w.writerow([repr(float(v)) for v in row])


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: data[:, i] for i, name in enumerate(rows[0])}


def simulate(scenario: FaultScenario, controller: Callable[[np.ndarray], np.ndarray] | None = None,
             dt: float | None = None, substeps: int | None = None, x0=None,
             horizon: float | None = None) -> Trajectory:
    """Integrate the scenario; the controller sees states relative to the post-fault
    equilibrium and acts only from ``t_clear`` on (u = 0 before).

    Loss of synchronism (|angle deviation| > 10 pi) or a non-finite state ends
    the run early and is recorded on the trajectory instead of raising.
    """
    dt = scenario.dt if dt is None else dt
    substeps = scenario.substeps if substeps is None else substeps
    T = scenario.horizon if horizon is None else horizon
    K = int(round(T / dt))
    x_eq = scenario.equilibrium.x
    na = scenario.plant_pre.n_angles
    m = scenario.plant_pre.m
    x = scenario.x0 if x0 is None else np.array(x0, dtype=float)
    k_fault = int(round(scenario.t_fault / dt)) if scenario.has_fault else K + 1
    k_clear = int(round(scenario.t_clear / dt)) if scenario.has_fault else 0
    xs = np.empty((K + 1, x.size))
    us = np.zeros((K + 1, m))
    xs[0] = x
    phases = [scenario.networks[p] for p in PHASES]
    plants = [scenario.plant_pre, scenario.plant_pre, scenario.plant_post]
    diverged, t_div, ph_div = False, None, None
    last = K
    for k in range(K + 1):
        ph = 0 if k < k_fault else (1 if k < k_clear else 2)
        if not scenario.has_fault:
            ph = 0
        if controller is not None and k >= k_clear:
            u = np.asarray(controller(x - x_eq), dtype=float).reshape(m)
        else:
            u = np.zeros(m)
        us[k] = u
        if k == K:
            break
        try:
            x = sample_step(x, u, dt, substeps, phases[ph], plants[ph], t=k * dt)
        except IntegrationError:
            diverged, t_div, ph_div, last = True, (k + 1) * dt, PHASES[ph], k
            break
        xs[k + 1] = x
        if np.max(np.abs(x[:na] - x_eq[:na])) > DIVERGENCE_ANGLE:
            diverged, t_div, ph_div, last = True, (k + 1) * dt, PHASES[ph], k + 1
            break
    n = last + 1
    return Trajectory(
        t=np.arange(n) * dt, x=xs[:n], u=us[:n], x_eq=x_eq.copy(), n_angles=na,
        diverged=diverged, diverged_at=t_div, diverged_phase=ph_div,
        t_clear=scenario.t_clear if scenario.has_fault else 0.0,
    )
