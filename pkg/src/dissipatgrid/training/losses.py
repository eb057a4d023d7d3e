"""The four training losses and their weighted sum.

All functions accept a model whose parameters are either plain arrays or
leaves on a tape (see ``DissipativityModel.bind``); the result follows suit.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..diffcore import (absolute, max_select, min_eig_sym, reduce_mean, reduce_sum, softplus, square,
                        value_of)
from ..matnets import DissipativityModel, _R_of, delta_matrix, quad_form, supply_rate
from .config import TrainConfig, UserCost


class Batch(NamedTuple):
    x: np.ndarray
    xn: np.ndarray
    u: np.ndarray

    @classmethod
    def of(cls, x, xn, u) -> "Batch":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        b = cls(x, np.atleast_2d(np.asarray(xn, dtype=float)), np.atleast_2d(np.asarray(u, dtype=float)))
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        return b


def _mats(model, batch, mats):
    return mats if mats is not None else model.matrices(batch.x)


def violation(model: DissipativityModel, batch: Batch, mats: dict | None = None):
    """Per-tuple ``V(x_{k+1}) - V(x_k) - w(x_k, u_k)``."""
    mats = _mats(model, batch, mats)
    v_next = quad_form(batch.xn, model.matrix("W", batch.xn))
    v_now = quad_form(batch.x, mats["W"])
    return v_next - v_now - supply_rate(model, batch.x, batch.u, mats)


def loss_dissipativity(model, batch: Batch, eps_d: float, mats=None):
    return softplus(max_select(violation(model, batch, mats)) + eps_d)


def loss_delta(model, batch: Batch, eps_delta: float, mats=None):
    lam, _ = min_eig_sym(delta_matrix(model, batch.x, _mats(model, batch, mats)))
    return max_select(softplus(eps_delta - lam))


def user_cost(x: np.ndarray, u: np.ndarray, n_angles: int, cost: UserCost) -> np.ndarray:
    x = np.atleast_2d(x)
    u = np.atleast_2d(u)
    return (cost.a * np.sum(x[:, n_angles:] ** 2, axis=1) + cost.b * np.sum(x[:, :n_angles] ** 2, axis=1)
            + cost.c * np.sum(u ** 2, axis=1))


def loss_shaping(model, batch: Batch, cost: UserCost, eps_sp: float, n_angles: int,
                 mats=None, include_uRu: bool = False):
    mats = _mats(model, batch, mats)
    l = user_cost(batch.x, batch.u, n_angles, cost)
    matched = quad_form(batch.x, delta_matrix(model, batch.x, mats)) - violation(model, batch, mats)
    if include_uRu:
        matched = matched + quad_form(batch.u, _R_of(model, batch.x, mats["Rinv"]))
    return reduce_mean(square((l - matched) / (np.abs(l) + eps_sp)))


def loss_reg(params) -> "float":
    total = 0.0
    for p in params:
        total = total + reduce_sum(absolute(p))
    return total


def _raw_params(model: DissipativityModel) -> list:
    # parameters as stored, so tape leaves keep their gradient path
    out = []
    for net in model.nets.values():
        for w, b in zip(net.mlp.weights, net.mlp.biases):
            out += [w, b]
    return out


def total_loss(model, batch: Batch, config: TrainConfig, n_angles: int, params=None):
    """Weighted sum; returns ``(total, parts)`` with parts as floats."""
    mats = model.matrices(batch.x)
    w1, w2, w3, w4 = config.weights
    parts = {
        "L_d": loss_dissipativity(model, batch, config.eps_d, mats),
        "L_delta": loss_delta(model, batch, config.eps_delta, mats),
        "L_sp": loss_shaping(model, batch, config.cost, config.eps_sp, n_angles, mats,
                             config.shape_includes_uRu),
        "L_r": loss_reg(_raw_params(model) if params is None else params),
    }
    total = w1 * parts["L_d"] + w2 * parts["L_delta"]
    if w3:
        total = total + w3 * parts["L_sp"]
    if w4:
        total = total + w4 * parts["L_r"]
    return total, {k: float(value_of(v)) for k, v in parts.items()}


__all__ = ["Batch", "loss_delta", "loss_dissipativity", "loss_reg", "loss_shaping", "total_loss",
           "user_cost", "violation"]
