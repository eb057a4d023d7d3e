"""Matrix-valued networks and the dissipativity model built from them.

A :class:`DissipativityModel` holds four independent MLP-backed matrix fields
of the (shifted) state x:

* ``W``    n x n positive definite, storage ``V(x) = x^T W(x) x``
* ``Q``    n x n symmetric
* ``S``    n x m
* ``Rinv`` m x m positive definite, read as the inverse of ``R(x)``

Every function takes ``x`` of shape (n,) or (batch, n). Parameters may be
plain arrays (inference) or tape variables (training, see :meth:`bind`).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffcore import (
    ContractError,
    MlpParams,
    Tape,
    diag_embed,
    diagonal,
    init_mlp,
    mat_inverse,
    mlp_forward,
    softplus,
    transpose,
    tril_from_vector,
    value_of,
)
from .diffcore.tape import matmul, reshape

MODEL_FORMAT = "dissipatgrid.model/1"
KINDS = ("ordinary", "symmetric", "pd", "pd_inverse")
NET_NAMES = ("W", "Q", "S", "Rinv")


@dataclass
class MatNet:
    kind: str
    p: int
    q: int
    mlp: MlpParams
    eps_pd: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown matrix-net kind {self.kind!r}")
        if self.kind != "ordinary" and self.p != self.q:
            raise ContractError(f"{self.kind} matrix nets must be square")
        if self.eps_pd <= 0:
            raise ContractError("eps_pd must be positive")

    @staticmethod
    def out_units(kind: str, p: int, q: int) -> int:
        return p * (p + 1) // 2 if kind in ("pd", "pd_inverse") else p * q


def matnn_forward(net: MatNet, x, input_scale=None):
    """Matrix field at ``x``: shape (p, q) for a single state, (batch, p, q) otherwise."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    z = mlp_forward(net.mlp, xb if input_scale is None else xb * input_scale)
    B = xb.shape[0]
    if net.kind == "ordinary":
        out = reshape(z, (B, net.p, net.q))
    elif net.kind == "symmetric":
        A = reshape(z, (B, net.p, net.p))
        out = (A + transpose(A)) * 0.5
    else:
        L = tril_from_vector(z, net.p)
        d = diagonal(L)
        Lt = L - diag_embed(d) + diag_embed(softplus(d) + net.eps_pd)
        out = matmul(Lt, transpose(Lt)) + np.eye(net.p) * net.eps_pd
    return out[0] if single else out


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def quad_form(x: np.ndarray, A):
    """``x_b^T A_b x_b`` per batch element; ``x`` is data, ``A`` may be on a tape."""
    r = matmul(matmul(x[:, None, :], A), x[:, :, None])
    return reshape(r, (x.shape[0],))


@dataclass
class DissipativityModel:
    n: int
    m: int
    nets: dict[str, MatNet]
    anchor: np.ndarray
    input_scale: np.ndarray | None = None
    state_weight: np.ndarray | None = None
    storage_gain: float = 1.0
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, n: int, m: int, rng: np.random.Generator, width: int = 128, depth: int = 2,
             eps_pd: float = 1e-3, activation: str = "gelu", anchor=None,
             input_scale=None, state_weight=None, storage_gain: float = 1.0) -> "DissipativityModel":
        shapes = {"W": ("pd", n, n), "Q": ("symmetric", n, n), "S": ("ordinary", n, m),
                  "Rinv": ("pd_inverse", m, m)}
        nets = {}
        for name in NET_NAMES:
            kind, p, q = shapes[name]
            sizes = [n] + [width] * depth + [MatNet.out_units(kind, p, q)]
            nets[name] = MatNet(kind, p, q, init_mlp(sizes, rng, activation), eps_pd)
        anchor = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float)
        scale = None if input_scale is None else np.asarray(input_scale, dtype=float)
        weight = None if state_weight is None else np.asarray(state_weight, dtype=float)
        if weight is not None and np.any(weight < 1.0):
            raise ContractError("state weights must be >= 1 to keep V >= eps_pd |x|^2")
        if storage_gain < 1.0:
            raise ContractError("storage gain must be >= 1 to keep V >= eps_pd |x|^2")
        return cls(n, m, nets, anchor, scale, weight, float(storage_gain))

    @property
    def eps_pd(self) -> float:
        return self.nets["W"].eps_pd

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays in a fixed order (W, Q, S, Rinv; layer by layer)."""
        out = []
        for name in NET_NAMES:
            out += self.nets[name].mlp.arrays()
        return out

    def bind(self, tape: Tape) -> tuple["DissipativityModel", list]:
        """Copy whose parameters are leaves on ``tape``; also returns the leaves."""
        leaves = []
        nets = {}
        for name in NET_NAMES:
            net = self.nets[name]
            ws = [tape.leaf(value_of(w), f"{name}.w{i}") for i, w in enumerate(net.mlp.weights)]
            bs = [tape.leaf(value_of(b), f"{name}.b{i}") for i, b in enumerate(net.mlp.biases)]
            for w, b in zip(ws, bs):
                leaves += [w, b]
            nets[name] = replace(net, mlp=MlpParams(ws, bs, net.mlp.activation))
        return replace(self, nets=nets), leaves

    def matrix(self, name: str, x):
        """One matrix field.

        W, Q and S are congruence-weighted by ``diag(state_weight)``; W also
        carries the fixed ``storage_gain``.
        """
        out = matnn_forward(self.nets[name], x, self.input_scale)
        d = self.state_weight
        if name == "Rinv":
            return out
        if d is not None:
            out = out * (np.outer(d, d) if name in ("W", "Q") else d[:, None])
        if name == "W" and self.storage_gain != 1.0:
            out = out * self.storage_gain
        return out

    def matrices(self, x):
        """W, Q, S, Rinv at ``x`` (batched)."""
        return {k: self.matrix(k, x) for k in NET_NAMES}

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        nets = {}
        for name in NET_NAMES:
            net = self.nets[name]
            nets[name] = {
                "kind": net.kind, "p": net.p, "q": net.q, "eps_pd": net.eps_pd,
                "activation": net.mlp.activation,
                "weights": [value_of(w).tolist() for w in net.mlp.weights],
                "biases": [value_of(b).tolist() for b in net.mlp.biases],
            }
        w0 = self.nets["W"].mlp
        return {
            "format": MODEL_FORMAT,
            "n": self.n,
            "m": self.m,
            "width": int(value_of(w0.weights[0]).shape[1]),
            "depth": len(w0.weights) - 1,
            "eps_pd": self.eps_pd,
            "anchor": self.anchor.tolist(),
            "input_scale": None if self.input_scale is None else self.input_scale.tolist(),
            "state_weight": None if self.state_weight is None else self.state_weight.tolist(),
            "storage_gain": self.storage_gain,
            "nets": nets,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DissipativityModel":
        if d.get("format") != MODEL_FORMAT:
            raise ContractError(f"/format: expected {MODEL_FORMAT!r}, got {d.get('format')!r}")
        nets = {}
        for name in NET_NAMES:
            nd = d["nets"][name]
            mlp = MlpParams([np.array(w, dtype=float) for w in nd["weights"]],
                            [np.array(b, dtype=float) for b in nd["biases"]], nd["activation"])
            nets[name] = MatNet(nd["kind"], nd["p"], nd["q"], mlp, nd["eps_pd"])
        scale, weight = d.get("input_scale"), d.get("state_weight")
        return cls(d["n"], d["m"], nets, np.array(d["anchor"], dtype=float),
                   None if scale is None else np.array(scale, dtype=float),
                   None if weight is None else np.array(weight, dtype=float),
                   float(d.get("storage_gain", 1.0)), d.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DissipativityModel":
        with open(Path(path)) as fh:
            return cls.from_dict(json.load(fh))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()[:16]


@dataclass
class ConstantModel:
    """State-independent quadruple; a reference model for checks and tests."""

    W: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    Rinv: np.ndarray

    def __post_init__(self):
        for k in NET_NAMES:
            setattr(self, k, np.atleast_2d(np.asarray(getattr(self, k), dtype=float)))

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.Rinv.shape[0]

    def matrix(self, name: str, x):
        x = np.asarray(x, dtype=float)
        A = getattr(self, name)
        return A.copy() if x.ndim == 1 else np.broadcast_to(A, (x.shape[0],) + A.shape).copy()

    def matrices(self, x):
        return {k: self.matrix(k, x) for k in NET_NAMES}


def storage_V(model: DissipativityModel, x):
    xb, single = _as_batch(x)
    v = quad_form(xb, model.matrix("W", xb))
    return v[0] if single else v


def _R_of(model, xb, Rinv=None):
    if Rinv is None:
        Rinv = model.matrix("Rinv", xb)
    return mat_inverse(Rinv)


def supply_rate(model: DissipativityModel, x, u, mats: dict | None = None):
    """``x^T Q x + 2 x^T S u + u^T R u`` with ``R = inv(Rinv)``."""
    xb, single = _as_batch(x)
    ub, _ = _as_batch(u)
    mats = mats or model.matrices(xb)
    R = _R_of(model, xb, mats["Rinv"])
    w = (quad_form(xb, mats["Q"])
         + reshape(matmul(matmul(xb[:, None, :], mats["S"]), ub[:, :, None]), (xb.shape[0],)) * 2.0
         + quad_form(ub, R))
    return w[0] if single else w


def delta_matrix(model: DissipativityModel, x, mats: dict | None = None):
    """``S Rinv S^T - Q``, symmetrized."""
    xb, single = _as_batch(x)
    mats = mats or model.matrices(xb)
    S = mats["S"]
    D = matmul(matmul(S, mats["Rinv"]), transpose(S)) - mats["Q"]
    D = (D + transpose(D)) * 0.5
    return D[0] if single else D


def control_pi(model: DissipativityModel, x, mats: dict | None = None):
    """Feedback ``-Rinv S^T x``; no matrix inversion involved."""
    xb, single = _as_batch(x)
    if mats is None:
        mats = {k: model.matrix(k, xb) for k in ("S", "Rinv")}
    u = -reshape(matmul(matmul(mats["Rinv"], transpose(mats["S"])), xb[:, :, None]),
                 (xb.shape[0], model.m))
    return u[0] if single else u


def controller(model: DissipativityModel):
    """Plain callable ``dx -> u`` for closed-loop simulation."""
    def pi(dx):
        return np.asarray(control_pi(model, np.asarray(dx, dtype=float)))
    return pi
