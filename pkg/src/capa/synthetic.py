"""Synthetic datasets, evaluation metrics and brute-force oracles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .core import DataMatrix, DimensionError, Kind, ModelParams, NumericError, center
from .priors import PriorOperators

ORACLE_MAX = 64


@dataclass(frozen=True)
class SyntheticDataset:
    """Raw (uncentered) samples plus whatever generated them."""

    raw: np.ndarray
    labels: Optional[np.ndarray]
    ground_truth: Optional[np.ndarray]
    descriptor: dict
    is_sequence: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def data(self) -> DataMatrix:
        return center(self.raw, labels=self.labels, is_sequence=self.is_sequence)


def make_swiss_roll(T: int, noise_sd: float = 0.0, seed: int = 0) -> SyntheticDataset:
    if T < 10:
        raise DimensionError(f"swiss roll needs T >= 10, got {T}")
    rng = np.random.default_rng(seed)
    u = rng.uniform(1.5 * np.pi, 4.5 * np.pi, T)
    h = rng.uniform(0.0, 21.0, T)
    X = np.vstack([u * np.cos(u), h, u * np.sin(u)])
    if noise_sd > 0:
        X = X + noise_sd * rng.standard_normal(X.shape)
    desc = {"generator": "swissroll", "T": T, "noise_sd": noise_sd, "seed": seed}
    return SyntheticDataset(X, None, np.vstack([u, h]), desc)


def simplex_vertices(K: int, dim: int, separation: float) -> np.ndarray:
    """K points in R^dim with all pairwise distances equal to ``separation``."""
    if dim < K - 1:
        raise DimensionError(f"a {K}-point simplex needs dim >= {K - 1}, got {dim}")
    E = np.eye(K) - 1.0 / K
    # orthonormal coordinates of the centered basis vectors in K-1 dims
    U, s, _ = np.linalg.svd(E)
    coords = (U[:, :K - 1] * s[:K - 1]).T
    V = np.zeros((dim, K))
    V[:K - 1] = coords * (separation / np.sqrt(2.0))
    return V


def make_gaussian_clusters(K: int, per_class: int, dim: int, separation: float,
                           within_sd: float = 1.0, seed: int = 0) -> SyntheticDataset:
    """Isotropic Gaussian classes centered on a regular simplex."""
    if K < 2:
        raise DimensionError(f"need K >= 2 classes, got {K}")
    rng = np.random.default_rng(seed)
    means = simplex_vertices(K, dim, separation)
    labels = np.repeat(np.arange(K), per_class)
    X = means[:, labels] + within_sd * rng.standard_normal((dim, labels.size))
    desc = {"generator": "clusters", "K": K, "per_class": per_class, "dim": dim,
            "separation": separation, "within_sd": within_sd, "seed": seed}
    return SyntheticDataset(X, labels, None, desc, extras={"means": means})


def ar1_chains(lambdas, T: int, rng) -> np.ndarray:
    """Stationary unit-variance AR(1) chains, one row per coefficient."""
    lam = np.asarray(lambdas, dtype=float)
    noise = rng.standard_normal((lam.size, T))
    Y = np.empty((lam.size, T))
    Y[:, 0] = noise[:, 0]
    scale = np.sqrt(1.0 - lam ** 2)
    for t in range(1, T):
        Y[:, t] = lam * Y[:, t - 1] + scale * noise[:, t]
    return Y


def make_slow_signals(N_slow: int, T: int, lambdas, mixing_seed: int = 0,
                      dim: Optional[int] = None, noise_var: float = 0.0) -> SyntheticDataset:
    """Sample the SFA generative model: AR(1) latents with σ² = 1 - λ², mixed
    by random orthonormal columns, plus optional isotropic observation noise.

    Orthonormal mixing keeps every latent at the same signal-to-noise ratio
    (1 / noise_var).
    """
    lam = np.asarray(lambdas, dtype=float)
    if lam.shape != (N_slow,):
        raise DimensionError(f"need {N_slow} lambdas, got {lam.shape}")
    if np.any(lam < 0) or np.any(lam >= 1):
        raise DimensionError("lambdas must lie in [0, 1)")
    F = N_slow if dim is None else dim
    if F < N_slow:
        raise DimensionError(f"dim={F} smaller than the number of latents {N_slow}")
    rng = np.random.default_rng(mixing_seed)
    Q, R = np.linalg.qr(rng.standard_normal((F, N_slow)))
    A = Q * np.sign(np.diag(R))
    Y = ar1_chains(lam, T, rng)
    X = A @ Y
    if noise_var > 0:
        X = X + np.sqrt(noise_var) * rng.standard_normal(X.shape)
    desc = {"generator": "slow", "N_slow": N_slow, "T": T, "lambdas": lam.tolist(),
            "mixing_seed": mixing_seed, "dim": F, "noise_var": noise_var}
    return SyntheticDataset(X, None, Y, desc, is_sequence=True, extras={"mixing": A})


def subspace_angles(W1, W2) -> np.ndarray:
    """Principal angles (ascending, radians) between the row spans."""
    W1 = np.atleast_2d(np.asarray(W1, dtype=float))
    W2 = np.atleast_2d(np.asarray(W2, dtype=float))
    if W1.shape[1] != W2.shape[1]:
        raise DimensionError(f"row spaces live in different dimensions: {W1.shape} vs {W2.shape}")
    for W in (W1, W2):
        if np.linalg.matrix_rank(W) < W.shape[0]:
            raise DimensionError(f"matrix of shape {W.shape} is not of full row rank")
    return np.sort(sla.subspace_angles(W1.T, W2.T))


def slowness(Y: np.ndarray) -> np.ndarray:
    """Mean squared first difference of each row after standardizing it."""
    Y = np.asarray(Y, dtype=float)
    Z = Y - Y.mean(axis=1, keepdims=True)
    Z = Z / Z.std(axis=1, keepdims=True)
    return np.mean(np.diff(Z, axis=1) ** 2, axis=1)


def nearest_mean_errors(Y: np.ndarray, labels: np.ndarray) -> int:
    """Training errors of nearest-class-mean classification in latent space."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    means = np.stack([Y[:, labels == c].mean(axis=1) for c in classes], axis=1)
    d = ((Y[:, :, None] - means[:, None, :]) ** 2).sum(axis=0)
    return int(np.sum(classes[np.argmin(d, axis=1)] != labels))


@dataclass(frozen=True)
class OracleMoments:
    """Exact Gaussian posterior; ``joint_cov`` is indexed by t*N + n."""

    mean: np.ndarray
    cov: np.ndarray
    cross_cov: np.ndarray
    joint_cov: np.ndarray
    prior_precision: np.ndarray


def chain_precision(lam, sigma2, T, initial_var=1.0) -> np.ndarray:
    """Dense (N·T)² precision of independent AR(1) chains (t-major order)."""
    lam = np.asarray(lam, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    N = lam.size
    P = np.zeros((N * T, N * T))
    for n in range(N):
        Q = np.zeros((T, T))
        for t in range(T):
            Q[t, t] = (1.0 / initial_var if t == 0 else 1.0 / sigma2[n])
            if t < T - 1:
                Q[t, t] += lam[n] ** 2 / sigma2[n]
                Q[t, t + 1] = Q[t + 1, t] = -lam[n] / sigma2[n]
        P[n::N, n::N] = Q
    return P


def mrf_precision(prior: PriorOperators, N: int) -> np.ndarray:
    T = prior.n_samples
    P = np.zeros((N * T, N * T))
    for n in range(N):
        P[n::N, n::N] = prior.precision(n)
    return P


def dense_gaussian_oracle(prior, W, sigma_x2, X, initial_var=1.0) -> OracleMoments:
    """Condition the full (N·T)-dimensional Gaussian prior on ``X`` by dense solves.

    ``prior`` is a :class:`PriorOperators` (quadratic MRF prior) or an SFA
    :class:`ModelParams` (chain prior with the model's λ, σ²).
    """
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    F, T = Xv.shape
    N = W.shape[1]
    if N * T > ORACLE_MAX:
        raise DimensionError(f"oracle limited to N*T <= {ORACLE_MAX}, got {N * T}")
    if isinstance(prior, ModelParams):
        if prior.kind is not Kind.SFA:
            raise DimensionError("ModelParams priors must be SFA chains")
        P0 = chain_precision(prior.lambda_, prior.sigma2, T, initial_var)
    else:
        P0 = mrf_precision(prior, N)
    ev_min = np.linalg.eigvalsh(P0).min()
    if ev_min <= -1e-10 * max(1.0, np.abs(np.diag(P0)).max()):
        raise NumericError(f"prior precision is indefinite (min eigenvalue {ev_min:g})")
    P = P0 + np.kron(np.eye(T), W.T @ W / sigma_x2)
    h = (W.T @ Xv).T.ravel() / sigma_x2
    try:
        cf = sla.cho_factor(P, lower=True)
    except np.linalg.LinAlgError:
        raise NumericError("posterior precision is not positive definite") from None
    mu = sla.cho_solve(cf, h)
    C = sla.cho_solve(cf, np.eye(N * T))
    C = 0.5 * (C + C.T)
    blocks = C.reshape(T, N, T, N)
    cov = np.stack([blocks[t, :, t, :] for t in range(T)])
    cross = np.stack([blocks[t + 1, :, t, :] for t in range(T - 1)]) if T > 1 else np.zeros((0, N, N))
    return OracleMoments(mu.reshape(T, N).T, cov, cross, C, P0)
