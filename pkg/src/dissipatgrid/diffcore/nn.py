"""Activations and the multilayer perceptron used by every matrix network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .tape import ContractError, add, matmul, record, value_of

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    vx = value_of(x)
    cdf = ndtr(vx)
    out = vx * cdf
    return record(
        out, (x,), lambda g: (g * (cdf + vx * _INV_SQRT_2PI * np.exp(-0.5 * vx * vx)),)
    )


def softplus(x):
    """``ln(1 + e^x)``; above 30 evaluated as ``x + ln(1 + e^-x)``."""
    vx = value_of(x)
    big = vx > 30.0
    out = np.where(big, vx + np.log1p(np.exp(-np.where(big, vx, 0.0))),
                   np.log1p(np.exp(np.where(big, 0.0, vx))))
    return record(out, (x,), lambda g: (g * expit(vx),))


def identity(x):
    return x


ACTIVATIONS = {"gelu": gelu, "softplus": softplus, "identity": identity}


@dataclass
class MlpParams:
    """Dense layers ``h <- act(h @ W + b)``; the last layer has no activation.

    ``weights[i]`` has shape (fan_in, fan_out). Entries may be arrays or
    tape variables bound to the same arrays.
    """

    weights: list
    biases: list
    activation: str = "gelu"

    @property
    def sizes(self) -> list[int]:
        return [value_of(self.weights[0]).shape[0]] + [value_of(w).shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [value_of(w), value_of(b)]
        return out


def init_mlp(sizes: list[int], rng: np.random.Generator, activation: str = "gelu") -> MlpParams:
    """He-style uniform fan-in initialization, zero biases."""
    if len(sizes) < 2:
        raise ContractError("an MLP needs at least input and output sizes")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


def mlp_forward(params: MlpParams, x):
    """Evaluate on ``x`` of shape (n,) or (batch, n)."""
    n = value_of(params.weights[0]).shape[0]
    if value_of(x).shape[-1] != n:
        raise ContractError(f"MLP expects {n} inputs, got shape {value_of(x).shape}")
    act = ACTIVATIONS[params.activation]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = add(matmul(h, w), b)
        if i < last:
            h = act(h)
    return h
