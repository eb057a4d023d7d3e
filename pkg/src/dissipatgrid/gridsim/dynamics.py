"""Swing dynamics of VSGs on a Kron-reduced network, RK4 integration and equilibria.

States are ``[angles..., omegas...]``. With an infinite bus the angles are
VSG angles relative to the infinite-bus EMF (dimension 2k for k VSGs);
otherwise they are ``delta_i - delta_1`` for i >= 2 (dimension 2k - 1).
All functions broadcast over leading axes of the state.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import GridModel, ReducedNetwork, electrical_power, reduce_to_sources, solve_operating_point


class IntegrationError(FloatingPointError):
    def __init__(self, msg: str, t: float | None = None):
        super().__init__(msg)
        self.t = t


class NoEquilibriumError(RuntimeError):
    pass


@dataclass
class Plant:
    """Everything the swing equations need besides the network.

    ``M``, ``D`` and inputs are per unit on each VSG's own rating; ``P_ref``
    is on the system base, ``scale`` = rating / system base.
    """

    M: np.ndarray
    D: np.ndarray
    P_ref: np.ndarray
    scale: np.ndarray
    E: np.ndarray  # EMF magnitudes of all sources (network order)
    omega_b: float
    vsg_cols: np.ndarray  # positions of the VSGs among the sources
    inf_col: int | None  # position of the infinite bus, if any
    inf_angle: float = 0.0

    @property
    def k(self) -> int:
        return len(self.M)

    @property
    def n_angles(self) -> int:
        return self.k if self.inf_col is not None else self.k - 1

    @property
    def n(self) -> int:
        return self.n_angles + self.k

    @property
    def m(self) -> int:
        return self.k

    def with_p_ref(self, P_ref) -> "Plant":
        return replace(self, P_ref=np.array(P_ref, dtype=float))


def plant_from_model(model: GridModel):
    """Plant parameters and the pre-fault state from the model's operating point."""
    init = solve_operating_point(model)
    vsg_cols = np.array([i for i, s in enumerate(model.sources) if s.kind == "vsg"])
    inf = [i for i, s in enumerate(model.sources) if s.kind == "infinite"]
    vs = [model.sources[i] for i in vsg_cols]
    scale = np.array([s.rating / model.base_mva for s in vs])
    plant = Plant(
        M=np.array([s.M for s in vs], dtype=float),
        D=np.array([s.D for s in vs], dtype=float),
        P_ref=init.P[vsg_cols].copy(),
        scale=scale,
        E=init.E.copy(),
        omega_b=model.omega_b,
        vsg_cols=vsg_cols,
        inf_col=inf[0] if inf else None,
        inf_angle=float(init.delta[inf[0]]) if inf else 0.0,
    )
    x0 = state_from_angles(plant, init.delta, np.ones(plant.k))
    return plant, x0


def state_from_angles(plant: Plant, delta_sources, omega) -> np.ndarray:
    d = np.asarray(delta_sources, dtype=float)
    dv = d[..., plant.vsg_cols]
    if plant.inf_col is not None:
        rel = dv - d[..., [plant.inf_col]]
    else:
        rel = dv[..., 1:] - dv[..., :1]
    return np.concatenate([rel, np.asarray(omega, dtype=float)], axis=-1)


def source_angles(plant: Plant, x) -> np.ndarray:
    """Absolute-like EMF angles of all sources (reference angle 0) from a state."""
    x = np.asarray(x, dtype=float)
    rel = x[..., : plant.n_angles]
    nsrc = len(plant.E)
    out = np.zeros(x.shape[:-1] + (nsrc,))
    if plant.inf_col is not None:
        out[..., plant.vsg_cols] = rel
    else:
        out[..., plant.vsg_cols[1:]] = rel
    return out


def vsg_power(net: ReducedNetwork, plant: Plant, x) -> np.ndarray:
    """Electrical power of each VSG on the system base."""
    pe = electrical_power(net, source_angles(plant, x), plant.E)
    return pe[..., plant.vsg_cols]


def swing_rhs(x, u, net: ReducedNetwork, plant: Plant) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    na = plant.n_angles
    omega = x[..., na:]
    pe = vsg_power(net, plant, x)
    u = np.zeros_like(omega) if u is None else np.asarray(u, dtype=float)
    domega = ((plant.P_ref - pe) / plant.scale - plant.D * (omega - 1.0) + u) / plant.M
    if plant.inf_col is not None:
        ddelta = plant.omega_b * (omega - 1.0)
    else:
        ddelta = plant.omega_b * (omega[..., 1:] - omega[..., :1])
    return np.concatenate([ddelta, domega], axis=-1)


def rk4_step(x, u, h: float, net: ReducedNetwork, plant: Plant, rhs=None, t: float | None = None):
    """One classical RK4 step with ``u`` held constant.

    ``rhs`` overrides the vector field with any ``f(x, u)`` (test hook).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    f = rhs if rhs is not None else (lambda y, v: swing_rhs(y, v, net, plant))
    k1 = f(x, u)
    k2 = f(x + 0.5 * h * k1, u)
    k3 = f(x + 0.5 * h * k2, u)
    k4 = f(x + h * k3, u)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state during integration at t={t}", t)
    return out


def sample_step(x, u, dt: float, substeps: int, net: ReducedNetwork, plant: Plant,
                t: float | None = None) -> np.ndarray:
    """Advance one sampling interval with zero-order-held ``u``."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h = dt / substeps
    for _ in range(substeps):
        x = rk4_step(x, u, h, net, plant, t=t)
    return x


@dataclass
class Equilibrium:
    x: np.ndarray  # full state with omega = 1
    residual: float

    def angles(self, plant: Plant) -> np.ndarray:
        return self.x[: plant.n_angles]


def _power_jacobian(net: ReducedNetwork, plant: Plant, x) -> np.ndarray:
    """d(P_vsg)/d(relative angles)."""
    d = source_angles(plant, x)
    dij = d[:, None] - d[None, :]
    EE = plant.E[:, None] * plant.E[None, :]
    off = EE * (net.G * np.sin(dij) - net.B * np.cos(dij))
    np.fill_diagonal(off, 0.0)
    J = off.copy()
    J[np.diag_indices_from(J)] = -off.sum(axis=1)
    cols = plant.vsg_cols if plant.inf_col is not None else plant.vsg_cols[1:]
    return J[np.ix_(plant.vsg_cols, cols)]


def find_equilibrium(net: ReducedNetwork, plant: Plant, guess, tol: float = 1e-10,
                     max_iter: int = 100) -> Equilibrium:
    """Newton (Gauss-Newton when overdetermined) on ``P_ref - P_e`` at omega = 1."""
    na = plant.n_angles
    x = np.array(guess, dtype=float)
    if x.shape[-1] == na:
        x = np.concatenate([x, np.ones(plant.k)])
    x[na:] = 1.0
    res = np.inf
    for _ in range(max_iter):
        g = plant.P_ref - vsg_power(net, plant, x)
        res = float(np.max(np.abs(g)))
        if res <= tol:
            return Equilibrium(x, res)
        J = _power_jacobian(net, plant, x)
        if np.linalg.matrix_rank(J) < na:
            raise NoEquilibriumError("singular power-flow Jacobian")
        step = np.linalg.lstsq(J, g, rcond=None)[0]
        x[:na] += step
        if not np.all(np.isfinite(x)):
            break
    # polish once more for the final residual
    g = plant.P_ref - vsg_power(net, plant, x)
    res = float(np.max(np.abs(g)))
    if res <= tol:
        return Equilibrium(x, res)
    raise NoEquilibriumError(f"no equilibrium at nominal frequency (residual {res:.3g})")


def dispatch_equilibrium(net: ReducedNetwork, plant: Plant, guess, participation=None,
                         tol: float = 1e-10, max_iter: int = 100):
    """Shift set points by a common mismatch so an equilibrium at omega = 1 exists.

    Solves for relative angles and a scalar ``lam`` with
    ``P_ref + lam * participation = P_e``. Returns (plant with new P_ref, equilibrium).
    """
    if plant.inf_col is not None:
        return plant, find_equilibrium(net, plant, guess, tol=tol)
    na = plant.n_angles
    w = np.ones(plant.k) if participation is None else np.asarray(participation, float)
    w = w / w.sum()
    x = np.array(guess, dtype=float)
    x[na:] = 1.0
    lam = 0.0
    for _ in range(max_iter):
        g = plant.P_ref + lam * w - vsg_power(net, plant, x)
        if np.max(np.abs(g)) <= tol * 0.1:
            break
        J = np.column_stack([_power_jacobian(net, plant, x), -w])
        step = np.linalg.solve(J, g)
        x[:na] += step[:na]
        lam += step[na]
    new = plant.with_p_ref(plant.P_ref + lam * w)
    return new, find_equilibrium(net, new, x, tol=tol)


def state_jacobian(net: ReducedNetwork, plant: Plant, x, h: float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian of the swing vector field at ``x`` with u = 0."""
    x = np.asarray(x, dtype=float)
    J = np.zeros((x.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (swing_rhs(x + e, None, net, plant) - swing_rhs(x - e, None, net, plant)) / (2 * h)
    return J
