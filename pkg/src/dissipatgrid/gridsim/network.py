"""Network description, nodal admittance, Kron reduction and source initialization."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import root

GRID_FORMAT = "dissipatgrid.grid/1"


class ConfigError(ValueError):
    """Malformed model or scenario description."""


class ReductionError(np.linalg.LinAlgError):
    pass


@dataclass
class VsgParams:
    M: float
    D: float
    P_ref: float = 0.0
    E: float = 1.0
    X_v: float = 0.3

    def __post_init__(self):
        if not (self.M > 0 and self.D >= 0 and self.E > 0 and self.X_v > 0):
            raise ConfigError(f"invalid VSG parameters {self}")


@dataclass
class Bus:
    name: str
    kind: str = "pq"  # pq | pv | slack
    v: float = 1.0
    theta: float = 0.0
    p_gen: float = 0.0
    load_p: float = 0.0
    load_q: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass
class Branch:
    name: str
    frm: str
    to: str
    r: float = 0.0
    x: float = 0.0
    b: float = 0.0  # total line charging, split half per end


@dataclass
class Source:
    """A voltage source behind a reactance, attached to a network bus.

    ``kind`` is ``"vsg"`` (swing dynamics) or ``"infinite"`` (fixed EMF).
    ``rating`` is the machine base in MVA; M, D and X are on that base.
    """

    name: str
    bus: str
    kind: str = "vsg"
    x: float = 0.3
    M: float = 4.0
    D: float = 5.0
    rating: float = 100.0


@dataclass
class GridModel:
    name: str
    buses: list[Bus]
    branches: list[Branch]
    sources: list[Source]
    base_mva: float = 100.0
    f_nominal: float = 60.0
    meta: dict = field(default_factory=dict)

    @property
    def omega_b(self) -> float:
        return 2.0 * np.pi * self.f_nominal

    def bus_index(self) -> dict[str, int]:
        return {b.name: i for i, b in enumerate(self.buses)}

    @property
    def vsgs(self) -> list[Source]:
        return [s for s in self.sources if s.kind == "vsg"]

    @property
    def has_infinite_bus(self) -> bool:
        return any(s.kind == "infinite" for s in self.sources)

    def without_branch(self, name: str) -> "GridModel":
        if name not in {br.name for br in self.branches}:
            raise ConfigError(f"unknown branch {name!r}")
        m = copy.deepcopy(self)
        m.branches = [br for br in m.branches if br.name != name]
        return m

    def validate(self) -> None:
        idx = self.bus_index()
        if len(idx) != len(self.buses):
            raise ConfigError("duplicate bus names")
        for br in self.branches:
            if br.frm not in idx or br.to not in idx:
                raise ConfigError(f"branch {br.name} references an unknown bus")
            if br.r == 0.0 and br.x == 0.0:
                raise ConfigError(f"branch {br.name} has zero impedance")
        for s in self.sources:
            if s.bus not in idx:
                raise ConfigError(f"source {s.name} references unknown bus {s.bus}")
            if s.kind not in ("vsg", "infinite"):
                raise ConfigError(f"source {s.name}: unknown kind {s.kind!r}")
            if s.x <= 0:
                raise ConfigError(f"source {s.name}: reactance must be positive")
        if sum(s.kind == "infinite" for s in self.sources) > 1:
            raise ConfigError("at most one infinite bus is supported")
        if not self.vsgs:
            raise ConfigError("model has no VSG")


@dataclass
class ReducedNetwork:
    """Kron-reduced admittance among source EMF nodes; ``Y = G + jB``."""

    G: np.ndarray
    B: np.ndarray
    order: list[str]
    E: np.ndarray | None = None

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


def _model_from_dict(d: dict) -> GridModel:
    if d.get("format") != GRID_FORMAT:
        raise ConfigError(f"/format: expected {GRID_FORMAT!r}, got {d.get('format')!r}")
    try:
        m = GridModel(
            name=d.get("name", "grid"),
            buses=[Bus(**b) for b in d["buses"]],
            branches=[Branch(**{("frm" if k == "from" else k): v for k, v in br.items()})
                      for br in d["branches"]],
            sources=[Source(**s) for s in d["sources"]],
            base_mva=float(d.get("base_mva", 100.0)),
            f_nominal=float(d.get("f_nominal", 60.0)),
            meta=d.get("meta", {}),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed grid model: {exc}") from exc
    m.validate()
    return m


def model_to_dict(m: GridModel) -> dict:
    return {
        "format": GRID_FORMAT,
        "name": m.name,
        "base_mva": m.base_mva,
        "f_nominal": m.f_nominal,
        "buses": [vars(b).copy() for b in m.buses],
        "branches": [{("from" if k == "frm" else k): v for k, v in vars(br).items()}
                     for br in m.branches],
        "sources": [vars(s).copy() for s in m.sources],
        "meta": m.meta,
    }


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("dissipatgrid.gridsim") / "data" / name))


def load_grid(path_or_name: str | Path) -> GridModel:
    """Read a grid JSON file; bare names fall back to the bundled data files."""
    p = Path(path_or_name)
    if not p.exists():
        p = bundled_path(str(path_or_name))
        if not p.exists():
            raise ConfigError(f"grid model {path_or_name!r} not found")
    with open(p) as fh:
        return _model_from_dict(json.load(fh))


def build_admittance(model: GridModel, with_sources: bool = True,
                     grounded: tuple[str, ...] = ()) -> tuple[np.ndarray, list[str]]:
    """Nodal admittance matrix; loads enter as constant admittance at nominal voltage.

    With ``with_sources`` each source adds an internal EMF node behind its
    reactance (appended after the network buses). Grounded buses are removed,
    which models a solid three-phase fault.
    """
    idx = model.bus_index()
    names = [b.name for b in model.buses]
    if with_sources:
        names += [f"{s.name}:emf" for s in model.sources]
    n = len(names)
    Y = np.zeros((n, n), dtype=complex)
    for b in model.buses:
        i = idx[b.name]
        Y[i, i] += complex(b.shunt_g, b.shunt_b) + complex(b.load_p, -b.load_q)
    for br in model.branches:
        z = complex(br.r, br.x)
        if z == 0:
            raise ConfigError(f"branch {br.name} has zero impedance")
        y = 1.0 / z
        i, j = idx[br.frm], idx[br.to]
        Y[i, i] += y + 0.5j * br.b
        Y[j, j] += y + 0.5j * br.b
        Y[i, j] -= y
        Y[j, i] -= y
    if with_sources:
        for k, s in enumerate(model.sources):
            y = 1.0 / complex(0.0, s.x * model.base_mva / s.rating)
            i, j = idx[s.bus], len(model.buses) + k
            Y[i, i] += y
            Y[j, j] += y
            Y[i, j] -= y
            Y[j, i] -= y
    if grounded:
        keep = [i for i, nm in enumerate(names) if nm not in grounded]
        missing = set(grounded) - set(names)
        if missing:
            raise ConfigError(f"cannot ground unknown bus(es) {sorted(missing)}")
        Y = Y[np.ix_(keep, keep)]
        names = [names[i] for i in keep]
    return Y, names


def kron_reduce(Y: np.ndarray, retained, names: list[str] | None = None) -> ReducedNetwork:
    """Schur complement ``Y_rr - Y_re Y_ee^-1 Y_er`` onto the retained nodes."""
    n = Y.shape[0]
    r = list(retained)
    e = [i for i in range(n) if i not in set(r)]
    if e:
        Yee = Y[np.ix_(e, e)]
        if np.linalg.cond(Yee) > 1e14:
            lbl = [names[i] for i in e] if names else e
            raise ReductionError(f"eliminated block is singular for buses {lbl}")
        Yred = Y[np.ix_(r, r)] - Y[np.ix_(r, e)] @ np.linalg.solve(Yee, Y[np.ix_(e, r)])
    else:
        Yred = Y[np.ix_(r, r)].copy()
    order = [names[i] for i in r] if names else [str(i) for i in r]
    return ReducedNetwork(Yred.real.copy(), Yred.imag.copy(), order)


def reduce_to_sources(model: GridModel, grounded: tuple[str, ...] = ()) -> ReducedNetwork:
    Y, names = build_admittance(model, with_sources=True, grounded=grounded)
    retained = [names.index(f"{s.name}:emf") for s in model.sources]
    return kron_reduce(Y, retained, names)


def electrical_power(net: ReducedNetwork, delta, E=None) -> np.ndarray:
    """``P_i = sum_j E_i E_j (G_ij cos d_ij + B_ij sin d_ij)``; batched over leading axes."""
    E = net.E if E is None else np.asarray(E, dtype=float)
    d = np.asarray(delta, dtype=float)
    dij = d[..., :, None] - d[..., None, :]
    EE = E[:, None] * E[None, :]
    return (EE * (net.G * np.cos(dij) + net.B * np.sin(dij))).sum(axis=-1)


@dataclass
class SourceInit:
    """Steady state of the sources consistent with the bus-level operating point."""

    E: np.ndarray  # EMF magnitudes, per source
    delta: np.ndarray  # EMF angles, rad
    P: np.ndarray  # electrical power out of each EMF, system p.u.
    V: np.ndarray  # complex bus voltages


def solve_operating_point(model: GridModel) -> SourceInit:
    """Power flow with constant-impedance loads, then EMFs behind source reactances.

    Slack buses fix magnitude and angle, PV buses fix magnitude and the source
    injection, remaining buses carry zero injection.
    """
    Y, _ = build_admittance(model, with_sources=False)
    nb = len(model.buses)
    fixed_th = [i for i, b in enumerate(model.buses) if b.kind == "slack"]
    fixed_v = [i for i, b in enumerate(model.buses) if b.kind in ("slack", "pv")]
    if not fixed_th:
        raise ConfigError("power flow needs at least one slack bus")
    free_th = [i for i in range(nb) if i not in fixed_th]
    free_v = [i for i in range(nb) if i not in fixed_v]

    def unpack(z):
        v = np.array([b.v for b in model.buses], dtype=float)
        th = np.array([b.theta for b in model.buses], dtype=float)
        th[free_th] = z[: len(free_th)]
        v[free_v] = z[len(free_th):]
        return v * np.exp(1j * th)

    def mismatch(z):
        V = unpack(z)
        S = V * np.conj(Y @ V)
        p_spec = np.array([b.p_gen for b in model.buses])
        return np.concatenate([(S.real - p_spec)[free_th], S.imag[free_v]])

    z0 = np.concatenate([[model.buses[i].theta for i in free_th],
                         [model.buses[i].v for i in free_v]])
    sol = root(mismatch, z0, method="hybr", tol=1e-14)
    if np.max(np.abs(mismatch(sol.x))) > 1e-9:
        raise ConfigError(f"power flow did not converge: {sol.message}")
    V = unpack(sol.x)
    I_inj = Y @ V
    # split each bus injection among its sources by rating (one source per bus here)
    E, dl, P = [], [], []
    for s in model.sources:
        i = model.bus_index()[s.bus]
        share = [t for t in model.sources if t.bus == s.bus]
        frac = s.rating / sum(t.rating for t in share)
        I = I_inj[i] * frac
        emf = V[i] + 1j * s.x * model.base_mva / s.rating * I
        E.append(abs(emf))
        dl.append(np.angle(emf))
        P.append((emf * np.conj(I)).real)
    return SourceInit(np.array(E), np.array(dl), np.array(P), V)
