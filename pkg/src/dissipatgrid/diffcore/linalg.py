"""Differentiable inverse and smallest-eigenvalue routines for batches of small matrices."""
from __future__ import annotations

import numpy as np

from .tape import ContractError, record, value_of


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, msg: str, batch_index: int | None = None):
        super().__init__(msg)
        self.batch_index = batch_index


COND_LIMIT = 1e12
SYM_TOL = 1e-10


def mat_inverse(a, cond_limit: float = COND_LIMIT):
    """Inverse of a square matrix or a batch of them, shape (..., m, m)."""
    va = value_of(a)
    if va.ndim < 2 or va.shape[-1] != va.shape[-2]:
        raise ContractError(f"mat_inverse needs square matrices, got {va.shape}")
    cond = np.atleast_1d(np.linalg.cond(va).reshape(-1))
    bad = np.flatnonzero(~(cond <= cond_limit))
    if bad.size:
        k = int(bad[0])
        raise SingularMatrixError(
            f"matrix {k} in batch is singular or ill-conditioned (cond={cond[k]:.3g})", k
        )
    inv = np.linalg.inv(va)
    inv_t = np.swapaxes(inv, -1, -2)
    return record(inv, (a,), lambda g: (-(inv_t @ g @ inv_t),))


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of symmetric matrices by cyclic Jacobi rotations.

    Works on a batch of shape (..., n, n); every matrix in the batch gets the
    same rotation order, each with its own angle. Returns (eigenvalues,
    eigenvectors) unsorted: ``a @ V[..., :, j] = w[..., j] * V[..., :, j]``.
    """
    a = np.array(a, dtype=float)
    n = a.shape[-1]
    batch_shape = a.shape[:-2]
    A = a.reshape((-1, n, n)).copy()
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    scale = np.sqrt((A * A).sum(axis=(1, 2))) + 1e-300
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt((A[:, offmask] ** 2).sum(axis=1))
        if np.all(off <= tol * scale):
            break
        for p, q in pairs:
            apq = A[:, p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            app = A[:, p, p]
            aqq = A[:, q, q]
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore"):  # theta = inf gives t = 0, i.e. no rotation
                theta = (aqq - app) / (2.0 * safe)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c_ = c[:, None]
            s_ = s[:, None]
            # A <- J^T A J with J the (p, q) rotation
            Ap = A[:, :, p].copy()
            Aq = A[:, :, q].copy()
            A[:, :, p] = c_ * Ap - s_ * Aq
            A[:, :, q] = s_ * Ap + c_ * Aq
            Ap = A[:, p, :].copy()
            Aq = A[:, q, :].copy()
            A[:, p, :] = c_ * Ap - s_ * Aq
            A[:, q, :] = s_ * Ap + c_ * Aq
            Vp = V[:, :, p].copy()
            Vq = V[:, :, q].copy()
            V[:, :, p] = c_ * Vp - s_ * Vq
            V[:, :, q] = s_ * Vp + c_ * Vq
    w = np.diagonal(A, axis1=1, axis2=2).copy()
    return w.reshape(batch_shape + (n,)), V.reshape(batch_shape + (n, n))


def min_eig_sym(a, sym_tol: float = SYM_TOL):
    """Smallest eigenvalue and its unit eigenvector of symmetric matrices.

    Returns ``(lam, v)``; ``lam`` is differentiable (adjoint ``g * v v^T``),
    ``v`` is a plain array. Equal eigenvalues resolve to the lowest index.
    """
    va = value_of(a)
    if va.ndim < 2 or va.shape[-1] != va.shape[-2]:
        raise ContractError(f"min_eig_sym needs square matrices, got {va.shape}")
    asym = np.max(np.abs(va - np.swapaxes(va, -1, -2))) if va.size else 0.0
    if asym > sym_tol * max(1.0, float(np.max(np.abs(va)))):
        raise ContractError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    sym = 0.5 * (va + np.swapaxes(va, -1, -2))
    w, V = jacobi_eigh(sym)
    k = np.argmin(w, axis=-1)
    lam = np.take_along_axis(w, k[..., None], axis=-1)[..., 0]
    v = np.take_along_axis(V, k[..., None, None], axis=-1)[..., 0]
    outer = v[..., :, None] * v[..., None, :]
    lam_var = record(lam, (a,), lambda g: (np.asarray(g)[..., None, None] * outer,))
    return lam_var, v
