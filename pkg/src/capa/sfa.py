"""Slow feature analysis as a linear dynamical system.

The chain prior has only directed links, so its posterior is computed
exactly by forward filtering and RTS smoothing instead of a mean field.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import (ConfigurationError, DataMatrix, DimensionError, Kind, LatentMoments,
                   ModelParams, NumericError, Solver)
from .em import (EmOptions, EmTrace, _check_divergence, _converged, _m_step, initial_params)
from .ml import ml_fit
from .priors import Neighbourhood, NeighbourhoodSpec

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1.0 - 1e-6
INITIAL_VAR = 1.0


@dataclass(frozen=True)
class ChainMoments:
    """Smoothed chain posterior.

    ``cross_cov[t]`` is Cov(y_{t+1}, y_t | X) (0-based t); the full second
    cross-moment is :attr:`cross_moment`.
    """

    mean: np.ndarray
    cov: np.ndarray
    cross_cov: np.ndarray
    loglik: float

    @property
    def cross_moment(self) -> np.ndarray:
        return self.cross_cov + np.einsum("it,jt->tij", self.mean[:, 1:], self.mean[:, :-1])

    def marginals(self) -> LatentMoments:
        return LatentMoments(self.mean, self.cov)


def sfa_ml_fit(X: DataMatrix, N: int) -> ModelParams:
    """Slowest-first projection rows with unit latent covariance."""
    if not X.is_sequence:
        raise ConfigurationError("SFA requires sequential data (is_sequence=True)")
    if X.n_samples < 3:
        raise DimensionError(f"SFA needs T >= 3, got {X.n_samples}")
    return ml_fit(X, Kind.SFA, NeighbourhoodSpec(Neighbourhood.TEMPORAL_CHAIN), N)


def chain_smooth(X, params: ModelParams, initial_var=INITIAL_VAR, kernel=None) -> ChainMoments:
    """Exact posterior of the chain given observations ``X`` (centered).

    ``X`` may be a :class:`DataMatrix` or an (F, T) array.
    """
    if params.kind is not Kind.SFA:
        raise ConfigurationError(f"chain smoothing needs an SFA model, got {params.kind.value}")
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    W = params.W
    sx2 = float(params.sigma_x2)
    if not sx2 > 0:
        raise NumericError(f"sigma_x2 must be positive, got {sx2}")
    if Xv.shape[0] != W.shape[0]:
        raise DimensionError(f"data has F={Xv.shape[0]}, loading has shape {W.shape}")
    F, T = Xv.shape
    N = W.shape[1]
    h = (W.T @ Xv).T / sx2
    J = W.T @ W / sx2
    lam = np.asarray(params.lambda_, dtype=float)
    q = np.asarray(params.sigma2, dtype=float)
    p1 = np.full(N, float(initial_var))
    run = kernel or _kernels.rts_smooth
    try:
        mean, cov, cross, part = run(h, 0.5 * (J + J.T), lam, q, p1)
    except _kernels.FilterFailure as exc:
        raise NumericError(str(exc)) from None
    if not np.all(np.isfinite(mean)):
        raise NumericError("chain smoother produced non-finite means")
    ll = part - 0.5 * (T * F * np.log(2 * np.pi * sx2) + np.sum(Xv * Xv) / sx2)
    return ChainMoments(mean.T.copy(), cov, cross, float(ll))


def _lambda_objective(lam, n, a, b, c):
    return -0.5 * n * np.log(1 - lam ** 2) - (a - 2 * lam * b + lam ** 2 * c) / (2 * (1 - lam ** 2))


def update_lambda(cm: ChainMoments, rule: str = "constrained") -> np.ndarray:
    """Transition coefficients from smoothed moments, with σ² = 1 - λ².

    ``"constrained"`` maximizes the expected complete-data log-likelihood
    with the variance tied to λ (a cubic in λ), ``"ratio"`` is the
    untied LDS estimate Σ E[y_t y_{t-1}] / Σ E[y_{t-1}²].  Both are
    clipped to [1e-6, 1 - 1e-6].
    """
    E = cm.mean
    Ey2 = E ** 2 + np.diagonal(cm.cov, axis1=1, axis2=2).T
    a = Ey2[:, 1:].sum(axis=1)
    c = Ey2[:, :-1].sum(axis=1)
    b = np.diagonal(cm.cross_moment, axis1=1, axis2=2).sum(axis=0)
    n = E.shape[1] - 1
    if rule == "ratio":
        return np.clip(b / c, LAMBDA_MIN, LAMBDA_MAX)
    out = np.empty_like(a)
    for i in range(a.size):
        roots = np.roots([-n, b[i], n - a[i] - c[i], b[i]])
        cand = [LAMBDA_MIN, LAMBDA_MAX]
        cand += [r.real for r in roots if abs(r.imag) < 1e-9 and LAMBDA_MIN < r.real < LAMBDA_MAX]
        vals = [_lambda_objective(x, n, a[i], b[i], c[i]) for x in cand]
        out[i] = cand[int(np.argmax(vals))]
    return out


def _sorted_by_lambda(W, lam):
    order = np.argsort(-lam, kind="stable")
    return W[:, order], lam[order]


def sfa_em_fit(X: DataMatrix, N: int, opts: Optional[EmOptions] = None,
               init: Optional[ModelParams] = None):
    """Exact EM for the SFA chain; returns ``(ModelParams, EmTrace)``.

    The traced objective is the marginal log-likelihood log p(X | Ψ) of the
    parameters entering each iteration.  Latent dimensions are returned
    sorted by decreasing λ (slowest first).
    """
    opts = opts or EmOptions()
    if not X.is_sequence:
        raise ConfigurationError("SFA requires sequential data (is_sequence=True)")
    F, T = X.values.shape
    if not 1 <= N <= F:
        raise DimensionError(f"N must satisfy 1 <= N <= F={F}, got N={N}")
    params = init if init is not None else initial_params(X, Kind.SFA, N, opts.seed)
    W, sx2 = params.W, float(params.sigma_x2)
    lam = np.asarray(params.lambda_, dtype=float)
    sigma2 = 1.0 - lam ** 2
    Xv = X.values
    sx_floor = 1e-12 * max(float(np.mean(Xv * Xv)), np.finfo(float).tiny)
    trace = EmTrace()
    run = 0
    for it in range(1, opts.max_iter + 1):
        t0 = time.perf_counter()
        cur = ModelParams(Kind.SFA, Solver.EM, W, sx2, lam, sigma2, X.mean)
        cm = chain_smooth(Xv, cur)
        W, sx2, _, _ = _m_step(Xv, cm.marginals())
        if sx2 < sx_floor:
            trace.notes.append(f"iteration {it}: sigma_x2 clamped to {sx_floor:g}")
            sx2 = sx_floor
        lam = update_lambda(cm, opts.lambda_update)
        sigma2 = 1.0 - lam ** 2
        trace.iteration = it
        trace.objective.append(cm.loglik)
        trace.sigma_x2.append(sx2)
        if opts.record_params:
            trace.W.append(W.copy())
        trace.iter_seconds.append(time.perf_counter() - t0)
        # the ratio rule is not an exact M-step under σ² = 1 - λ², so drops are only noted
        run = _check_divergence(trace, run, strict=opts.lambda_update == "constrained")
        if _converged(trace, opts.tol):
            trace.converged, trace.reason = True, "tolerance"
            break
    W, lam = _sorted_by_lambda(W, lam)
    sigma2 = 1.0 - lam ** 2
    final = chain_smooth(Xv, ModelParams(Kind.SFA, Solver.EM, W, sx2, lam, sigma2, X.mean))
    meta = {
        "iterations": trace.iteration,
        "final_objective": final.loglik,
        "regularization_applied": False,
        "seed": opts.seed,
        "converged": trace.converged,
        "kernel": _kernels.BACKEND,
    }
    spec = NeighbourhoodSpec(Neighbourhood.TEMPORAL_CHAIN)
    return ModelParams(Kind.SFA, Solver.EM, W, sx2, lam, sigma2, X.mean.copy(), spec, meta), trace
