"""Post-training checks of a learned dissipativity certificate and its controller."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import min_eig_sym
from .gridsim.scenario import DIVERGENCE_ANGLE, FaultScenario, Trajectory, simulate
from .matnets import control_pi, controller, delta_matrix, quad_form, storage_V, supply_rate
from .training.config import RegionBounds, UserCost
from .training.dataset import TrajectoryDataset, in_region
from .training.losses import user_cost

REPORT_FORMAT = "dissipatgrid.report/1"
SETTLE_TOL = 1e-3


def _stats(values: np.ndarray, positive_is_bad: bool = True) -> dict:
    if values.size == 0:
        return {"count": 0, "max": None, "min": None, "mean": None, "fraction_bad": 0.0}
    bad = values > 0 if positive_is_bad else values <= 0
    return {"count": int(values.size), "max": float(values.max()), "min": float(values.min()),
            "mean": float(values.mean()), "fraction_bad": float(bad.mean())}


def dissipation_violation(model, x, xn, u) -> np.ndarray:
    x, xn, u = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x, xn, u))
    return storage_V(model, xn) - storage_V(model, x) - supply_rate(model, x, u)


def check_dissipativity(model, data: TrajectoryDataset | tuple) -> dict:
    """Statistics of ``V(x+) - V(x) - w(x, u)``; ``fraction_bad`` counts positives."""
    x, xn, u = (data.x, data.xn, data.u) if isinstance(data, TrajectoryDataset) else data
    return _stats(dissipation_violation(model, x, xn, u))


def probe_states(bounds: RegionBounds, n_angles: int, n: int, count: int, seed: int,
                 extra: np.ndarray | None = None) -> np.ndarray:
    """Uniform samples over the region box, plus optional extra states (e.g. training data)."""
    rng = np.random.default_rng(seed)
    span = np.concatenate([np.full(n_angles, bounds.delta), np.full(n - n_angles, bounds.omega)])
    p = rng.uniform(-1.0, 1.0, size=(count, n)) * span
    return p if extra is None else np.concatenate([p, np.atleast_2d(extra)])


def min_eig_delta(model, x, chunk: int = 4096) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = [min_eig_sym(delta_matrix(model, x[i:i + chunk]))[0] for i in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def check_delta_pd(model, probes) -> dict:
    """Smallest eigenvalue of Delta per probe; ``fraction_bad`` counts non-positive ones."""
    return _stats(min_eig_delta(model, probes), positive_is_bad=False)


def controller_magnitude(model, probes) -> dict:
    u = np.atleast_2d(control_pi(model, np.atleast_2d(probes)))
    return {"max_inf_norm": float(np.abs(u).max()) if u.size else 0.0,
            "mean_inf_norm": float(np.abs(u).max(axis=1).mean()) if u.size else 0.0}


def _post_clear_states(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        k = int(round((traj.t_clear or 0.0) / (traj.t[1] - traj.t[0]))) if len(traj.t) > 1 else 0
        return traj.dx[k:]
    return np.atleast_2d(np.asarray(traj, dtype=float))


def check_lyapunov_decrease(model, traj, bounds: RegionBounds | None = None, n_angles: int | None = None,
                            rtol: float = 1e-6) -> dict:
    """Slack ``V(x+) - V(x) + x^T Delta x`` along a closed loop; positive slack is a violation.

    ``traj`` is a simulated trajectory (checked from clearing on) or an array of
    relative states. With ``bounds`` the steps whose ``x_k`` leaves the region
    are reported separately and excluded from the fraction.
    """
    xs = _post_clear_states(traj)
    if len(xs) < 2:
        return {"steps": 0, "max_slack": 0.0, "fraction_violating": 0.0, "out_of_region_steps": 0,
                "out_of_region_violating": 0}
    x, xn = xs[:-1], xs[1:]
    V = storage_V(model, x)
    slack = storage_V(model, xn) - V + quad_form(x, delta_matrix(model, x))
    bad = slack > rtol * (1.0 + np.abs(V))
    inside = np.ones(len(x), dtype=bool)
    if bounds is not None:
        na = n_angles if n_angles is not None else getattr(traj, "n_angles", x.shape[1] // 2)
        inside = in_region(x, na, bounds)
    n_in = int(inside.sum())
    return {
        "steps": int(len(x)),
        "max_slack": float(slack.max()),
        "max_slack_in_region": float(slack[inside].max()) if n_in else None,
        "fraction_violating": float(bad[inside].mean()) if n_in else 0.0,
        "out_of_region_steps": int((~inside).sum()),
        "out_of_region_violating": int((bad & ~inside).sum()),
    }


def telescoping_cost_check(model, traj) -> dict:
    """Accumulate ``-dV + w(x, pi(x)) + x^T Delta x`` and compare with ``V(x_0) - V(x_K)``.

    Since ``w(x, pi(x)) = -x^T Delta x`` the sum telescopes, so the residual only
    measures floating-point error. ``converged`` says whether ``V(x_K)`` has
    dropped below ``1e-6 V(x_0)``, in which case the sum also approximates the
    optimal cost ``V(x_0)``.
    """
    xs = _post_clear_states(traj)
    V = storage_V(model, xs)
    if len(xs) < 2:
        return {"steps": 0, "sum": 0.0, "V0": float(V[0]) if len(xs) else 0.0, "VK": float(V[-1]) if len(xs) else 0.0,
                "residual": 0.0, "residual_vs_V0": 0.0, "converged": True}
    x = xs[:-1]
    u = np.atleast_2d(control_pi(model, x))
    terms = -(V[1:] - V[:-1]) + supply_rate(model, x, u) + quad_form(x, delta_matrix(model, x))
    total = math.fsum(terms.tolist())
    V0, VK = float(V[0]), float(V[-1])
    return {"steps": int(len(x)), "sum": total, "V0": V0, "VK": VK,
            "residual": total - (V0 - VK), "residual_vs_V0": total - V0,
            "converged": bool(VK <= 1e-6 * V0)}


@dataclass
class ClosedLoopMetrics:
    synchronism: bool
    diverged_at: float | None
    max_domega: float
    settling_time: float | None  # seconds after clearing; None if never settled
    cost: float
    max_u: float
    final_ddelta: list
    final_domega: list
    horizon: float

    def to_dict(self) -> dict:
        return asdict(self)


def closed_loop_metrics(traj: Trajectory, cost: UserCost | None = None,
                        settle_tol: float = SETTLE_TOL) -> ClosedLoopMetrics:
    """Metrics over the post-clearing part of a simulated run."""
    cost = cost or UserCost()
    dt = traj.t[1] - traj.t[0] if len(traj.t) > 1 else 0.0
    k0 = int(round((traj.t_clear or 0.0) / dt)) if dt else 0
    dx = traj.dx[k0:]
    na = traj.n_angles
    dw = np.abs(dx[:, na:]).max(axis=1) if len(dx) else np.zeros(0)
    finite = bool(np.all(np.isfinite(traj.x)))
    sync = (not traj.diverged) and finite and bool(np.all(np.abs(traj.dx[:, :na]) < DIVERGENCE_ANGLE))
    settle = None
    if sync and len(dw):
        above = np.nonzero(dw > settle_tol)[0]
        settle = 0.0 if above.size == 0 else (float((above[-1] + 1) * dt) if above[-1] + 1 < len(dw) else None)
    l = user_cost(dx, traj.u[k0:], na, cost) if len(dx) else np.zeros(0)
    return ClosedLoopMetrics(
        synchronism=sync,
        diverged_at=traj.diverged_at,
        max_domega=float(dw.max()) if len(dw) else 0.0,
        settling_time=settle,
        cost=float(np.sum(l) * dt),
        max_u=float(np.abs(traj.u).max()) if traj.u.size else 0.0,
        final_ddelta=traj.dx[-1, :na].tolist(),
        final_domega=traj.dx[-1, na:].tolist(),
        horizon=float(traj.t[-1]),
    )


def eval_closed_loop(scenario: FaultScenario, model=None, cost: UserCost | None = None,
                     settle_tol: float = SETTLE_TOL) -> tuple[ClosedLoopMetrics, Trajectory]:
    traj = simulate(scenario, None if model is None else controller(model))
    return closed_loop_metrics(traj, cost, settle_tol), traj


def verify_model(model, heldout: TrajectoryDataset, scenario: FaultScenario, *, n_probes: int = 10_000,
                 seed: int = 0, threshold: float = 0.01, cost: UserCost | None = None,
                 train_states: np.ndarray | None = None) -> dict:
    """Run every check and return a JSON-ready report with verdicts."""
    na = heldout.n_angles
    probes = probe_states(heldout.bounds, na, heldout.n, n_probes, seed, train_states)
    diss = check_dissipativity(model, heldout)
    delta = check_delta_pd(model, probes)
    metrics, traj = eval_closed_loop(scenario, model, cost)
    lyap = check_lyapunov_decrease(model, traj, heldout.bounds, na)
    tele = telescoping_cost_check(model, traj)
    verdicts = {
        "dissipativity": diss["fraction_bad"] <= threshold,
        "delta_pd": delta["fraction_bad"] <= threshold,
        "lyapunov_decrease": lyap["fraction_violating"] <= threshold,
        "telescoping": abs(tele["residual"]) <= 1e-8 * (1.0 + abs(tele["V0"])),
        "synchronism": metrics.synchronism,
    }
    return {
        "format": REPORT_FORMAT,
        "seed": seed,
        "thresholds": {"violation_fraction": threshold, "settle_tol": SETTLE_TOL,
                       "telescoping_rtol": 1e-8},
        "dissipativity": diss,
        "delta_pd": {**delta, "probes": int(len(probes))},
        "controller": controller_magnitude(model, probes[:n_probes]),
        "lyapunov_decrease": lyap,
        "telescoping": tele,
        "closed_loop": metrics.to_dict(),
        "verdicts": verdicts,
        "passed": all(verdicts.values()),
    }


def save_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
