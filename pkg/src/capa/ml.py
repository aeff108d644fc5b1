"""Closed-form maximum-likelihood fits by simultaneous diagonalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .core import DataMatrix, DimensionError, Kind, ModelParams, SingularityError, Solver
from .priors import NeighbourhoodSpec, PriorOperators, build_prior_operators, lambda_schedule

COND_LIMIT = 1e12
REG_EPS = 1e-10


@dataclass(frozen=True)
class ScatterPair:
    A1: np.ndarray
    A2: np.ndarray
    kind: Kind


def scatter_pair(X: DataMatrix, ops: PriorOperators) -> ScatterPair:
    A1, A2 = ops.quadratic_forms(X.values)
    return ScatterPair(A1, A2, ops.kind)


def _fix_signs(W):
    idx = np.argmax(np.abs(W), axis=1)
    s = np.sign(W[np.arange(W.shape[0]), idx])
    s[s == 0] = 1.0
    return W * s[:, None]


def _effective_rank(A):
    ev = np.linalg.eigvalsh(A)
    tol = ev.size * np.finfo(float).eps * max(np.abs(ev).max(), np.finfo(float).tiny)
    return int(np.sum(ev > tol))


def regularize(A2):
    """Return (A2', applied) with a ridge added when A2 is ill-conditioned."""
    ev = np.linalg.eigvalsh(A2)
    top = np.abs(ev).max()
    if ev.min() > 0 and top / ev.min() <= COND_LIMIT:
        return A2, False
    F = A2.shape[0]
    ridge = REG_EPS * np.trace(A2) / F
    return A2 + ridge * np.eye(F), True


def simultaneous_diagonalize(A1, A2, N, order="ascending", return_info=False):
    """Rows ``w`` with ``A1 w = μ A2 w`` and ``W A2 Wᵀ = I``.

    ``order="ascending"`` keeps the N smallest generalized eigenvalues.
    ``order="descending"`` ignores ``A2`` and returns the unit-norm
    eigenvectors of ``A1`` with the N largest eigenvalues.  Each row's
    largest-magnitude entry is made positive.
    """
    A1 = np.asarray(A1, dtype=float)
    F = A1.shape[0]
    if not 1 <= N <= F:
        raise DimensionError(f"N must satisfy 1 <= N <= F={F}, got {N}")
    info = {"regularization_applied": False}
    if order == "descending":
        mu, V = np.linalg.eigh(0.5 * (A1 + A1.T))
        sel = np.argsort(-mu, kind="stable")[:N]
        W = V[:, sel].T
        mu = mu[sel]
    elif order == "ascending":
        A2 = 0.5 * (np.asarray(A2, dtype=float) + np.asarray(A2, dtype=float).T)
        basis = None
        rank = _effective_rank(A2)
        if rank < F:
            # directions with w A2 wᵀ = 0 carry no signal; solve on range(A2)
            if rank < N:
                raise SingularityError(
                    f"constraint matrix has effective rank {rank} < N={N}", effective_rank=rank)
            s, U = np.linalg.eigh(A2)
            basis = U[:, np.argsort(-s, kind="stable")[:rank]]
            A1 = basis.T @ A1 @ basis
            A2 = basis.T @ A2 @ basis
            info["regularization_applied"] = True
        A2r, applied = regularize(A2)
        info["regularization_applied"] |= applied
        try:
            C = np.linalg.cholesky(A2r)
        except np.linalg.LinAlgError:
            raise SingularityError(
                f"constraint matrix is indefinite (effective rank {rank} of {F})",
                effective_rank=rank) from None
        Ci = sla.solve_triangular(C, np.eye(A2r.shape[0]), lower=True)
        M = Ci @ A1 @ Ci.T
        mu, V = np.linalg.eigh(0.5 * (M + M.T))
        W = (Ci.T @ V[:, :N]).T
        if basis is not None:
            W = W @ basis.T
        mu = mu[:N]
        info["effective_rank"] = rank
    else:
        raise ValueError(f"unknown order {order!r}")
    W = _fix_signs(W)
    if return_info:
        info["eigenvalues"] = mu
        return W, info
    return W


def residual_variance(W: np.ndarray, X: np.ndarray) -> float:
    """Mean squared residual of the best reconstruction from ``W X``."""
    Q, _ = np.linalg.qr(W.T)
    R = X - Q @ (Q.T @ X)
    return float(np.mean(R ** 2))


def ml_fit(X: DataMatrix, kind, spec: Optional[NeighbourhoodSpec], N: int,
           ops: Optional[PriorOperators] = None) -> ModelParams:
    """Maximum-likelihood projection rows for ``kind``.

    Rows are ordered most expressive / discriminant / local / slow first,
    matching the decreasing λ schedule.  Scale: unit norm (PCA), unit
    latent covariance W S Wᵀ = I (LDA, SFA), W X D Xᵀ Wᵀ = I (LPP).
    """
    kind = Kind(kind)
    F, T = X.values.shape
    if not 1 <= N <= F:
        raise DimensionError(f"N must satisfy 1 <= N <= F={F}, got N={N}")
    lam, sigma2 = lambda_schedule(N)
    spec = spec or NeighbourhoodSpec.default_for(kind)
    if ops is None:
        ops = build_prior_operators(kind, X, spec, lam, sigma2)
    pair = scatter_pair(X, ops)
    if kind is Kind.PCA:
        W, info = simultaneous_diagonalize(pair.A1 / T, None, N, "descending", return_info=True)
    else:
        W, info = simultaneous_diagonalize(pair.A1, pair.A2, N, "ascending", return_info=True)
        if kind in (Kind.LDA, Kind.SFA):
            # W A2 Wᵀ = I with A2 = X Xᵀ; rescale to unit latent covariance
            W = W * np.sqrt(T)
    meta = {
        "iterations": 0,
        "final_objective": None,
        "regularization_applied": bool(info["regularization_applied"]),
        "eigenvalues": np.asarray(info["eigenvalues"]).tolist(),
    }
    if "effective_rank" in info:
        meta["effective_rank"] = info["effective_rank"]
    if ops.notes:
        meta["notes"] = list(ops.notes)
    return ModelParams(kind, Solver.ML, W, residual_variance(W, X.values), lam, sigma2,
                       X.mean.copy(), spec, meta)
