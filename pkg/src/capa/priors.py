"""Latent neighbourhoods and the operator pairs of the quadratic MRF prior.

Every prior has the form

    P(Y) ∝ exp(-1/2 (tr[Λ1 Y B1 Yᵀ] + tr[Λ2 Y B2 Yᵀ]))

with T×T matrices B1, B2 fixed by the neighbourhood and diagonal N×N
weights Λ1, Λ2 fixed by (λ, σ²).  B matrices are never materialized on
the fitting path; :meth:`PriorOperators.quadratic_forms` evaluates
X·B·Xᵀ from their structure.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .core import ConfigurationError, DataMatrix, DimensionError, Kind


class Neighbourhood(str, enum.Enum):
    FULL = "full"
    WITHIN_CLASS = "within_class"
    KNN = "knn"
    TEMPORAL_CHAIN = "temporal_chain"


_REQUIRED = {
    Kind.PCA: Neighbourhood.FULL,
    Kind.LDA: Neighbourhood.WITHIN_CLASS,
    Kind.LPP: Neighbourhood.KNN,
    Kind.SFA: Neighbourhood.TEMPORAL_CHAIN,
}


@dataclass(frozen=True)
class NeighbourhoodSpec:
    kind: Neighbourhood
    k: int = 12
    weights: str = "constant"  # or "heat"
    gamma: Union[float, str] = "auto"
    symmetrize: str = "union"  # or "mutual"

    def __post_init__(self):
        if self.weights not in ("constant", "heat"):
            raise ConfigurationError(f"unknown weights {self.weights!r}")
        if self.symmetrize not in ("union", "mutual"):
            raise ConfigurationError(f"unknown symmetrization {self.symmetrize!r}")
        if self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")
        if self.gamma != "auto" and not float(self.gamma) > 0:
            raise ConfigurationError(f"gamma must be positive or 'auto', got {self.gamma!r}")

    @classmethod
    def default_for(cls, kind: Kind, **kwargs) -> "NeighbourhoodSpec":
        return cls(_REQUIRED[Kind(kind)], **kwargs)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.kind is Neighbourhood.KNN:
            out.update(k=self.k, weights=self.weights, gamma=self.gamma,
                       symmetrize=self.symmetrize)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "NeighbourhoodSpec":
        d = dict(d)
        return cls(Neighbourhood(d.pop("kind")), **d)


def lambda_schedule(N: int):
    """Evenly spaced, strictly decreasing λ in (0, 1) with σ² = 1 - λ².

    >>> lambda_schedule(3)[0]
    array([0.75, 0.5 , 0.25])
    """
    if N < 1:
        raise DimensionError(f"N must be >= 1, got {N}")
    lam = 1.0 - np.arange(1, N + 1) / (N + 1.0)
    return lam, 1.0 - lam ** 2


def _sq_dists_rows(values, rows):
    diff = values[:, rows, None] - values[:, None, :]
    return np.einsum("fij,fij->ij", diff, diff)


def pairwise_sq_dists(values: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Exact (bitwise symmetric) squared Euclidean distances between columns."""
    T = values.shape[1]
    out = np.empty((T, T))
    for s in range(0, T, chunk):
        out[s:s + chunk] = _sq_dists_rows(values, slice(s, s + chunk))
    return out


def auto_gamma(values: np.ndarray, chunk: int = 256) -> float:
    """Median of all pairwise squared distances (i < j)."""
    T = values.shape[1]
    parts = []
    for s in range(0, T, chunk):
        block = _sq_dists_rows(values, slice(s, s + chunk))
        r, c = np.triu_indices(block.shape[0], 1, m=T - s)
        parts.append(block[:, s:][r, c])
    g = float(np.median(np.concatenate(parts)))
    if not g > 0:
        raise ConfigurationError("all points coincide; cannot choose gamma automatically")
    return g


def _resolve_gamma(values, gamma):
    if gamma == "auto" or gamma is None:
        return auto_gamma(values)
    gamma = float(gamma)
    if not gamma > 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    return gamma


def heat_kernel_weights(X: DataMatrix, gamma="auto") -> np.ndarray:
    """Dense w_ij = exp(-‖x_i - x_j‖² / γ) over all pairs."""
    if X.n_samples < 2:
        raise DimensionError("need T >= 2")
    g = _resolve_gamma(X.values, gamma)
    return np.exp(-pairwise_sq_dists(X.values) / g)


def knn_graph(X: DataMatrix, k: int, weights: str = "constant", symmetrize: str = "union",
              gamma="auto"):
    """k-nearest-neighbour graph and its Laplacian.

    Returns sparse CSR matrices ``(W_adj, D, L)`` with ``D = diag(W_adj 1)``
    and ``L = D - W_adj``.  Ties between equidistant candidates go to the
    lower sample index.
    """
    T = X.n_samples
    if not 1 <= k < T:
        raise ConfigurationError(f"k must satisfy 1 <= k < T={T}, got {k}")
    if weights not in ("constant", "heat"):
        raise ConfigurationError(f"unknown weights {weights!r}")
    if symmetrize not in ("union", "mutual"):
        raise ConfigurationError(f"unknown symmetrization {symmetrize!r}")
    g = _resolve_gamma(X.values, gamma) if weights == "heat" else None

    rows, cols, vals = [], [], []
    chunk = max(1, min(256, 2_000_000 // max(1, T * X.n_features)))
    for s in range(0, T, chunk):
        d = _sq_dists_rows(X.values, slice(s, s + chunk))
        r = np.arange(d.shape[0])
        d[r, s + r] = np.inf
        nn = np.argsort(d, axis=1, kind="stable")[:, :k]
        rows.append(np.repeat(s + r, k))
        cols.append(nn.ravel())
        if g is None:
            vals.append(np.ones(nn.size))
        else:
            vals.append(np.exp(-np.take_along_axis(d, nn, axis=1).ravel() / g))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(T, T))
    W_adj = A.maximum(A.T) if symmetrize == "union" else A.minimum(A.T)
    W_adj = sp.csr_matrix(W_adj)
    W_adj.eliminate_zeros()
    deg = np.asarray(W_adj.sum(axis=1)).ravel()
    D = sp.diags(deg, format="csr")
    L = sp.csr_matrix(D - W_adj)
    return W_adj, D, L


def _class_sizes(labels):
    return np.bincount(labels)


@dataclass(frozen=True)
class PriorOperators:
    """B1, B2 (T×T) and Λ1, Λ2 (diagonal N×N) of one prior.

    The B matrices are available densely through :attr:`B1`/:attr:`B2`
    for inspection and small-instance oracles.
    """

    kind: Kind
    n_samples: int
    Lambda1: np.ndarray
    Lambda2: np.ndarray
    labels: Optional[np.ndarray] = None
    adjacency: Optional[sp.csr_matrix] = None
    notes: tuple = field(default_factory=tuple)

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def _dense(self, which: int) -> np.ndarray:
        T = self.n_samples
        I = np.eye(T)
        M = -np.ones((T, T)) / T
        if self.kind is Kind.PCA:
            return I if which == 1 else M
        if self.kind is Kind.LDA:
            if which == 2:
                return I - M
            C = np.zeros((T, T))
            sizes = _class_sizes(self.labels)
            for c, n_c in enumerate(sizes):
                idx = np.flatnonzero(self.labels == c)
                C[np.ix_(idx, idx)] = 1.0 / n_c
            return I - C
        if self.kind is Kind.LPP:
            D = np.diag(self.degrees)
            return D - self.adjacency.toarray() if which == 1 else D
        P = np.zeros((T, T - 1))
        j = np.arange(T - 1)
        P[j, j] = 1.0
        P[j + 1, j] = -1.0
        return P @ P.T if which == 1 else I

    @property
    def B1(self) -> np.ndarray:
        return self._dense(1)

    @property
    def B2(self) -> np.ndarray:
        return self._dense(2)

    def quadratic_forms(self, X: np.ndarray):
        """(X B1 Xᵀ, X B2 Xᵀ) without forming the T×T matrices."""
        if X.shape[1] != self.n_samples:
            raise DimensionError(f"X has {X.shape[1]} samples, operators built for {self.n_samples}")
        T = self.n_samples
        G = X @ X.T
        if self.kind is Kind.PCA:
            s = X.sum(axis=1)
            A1, A2 = G, -np.outer(s, s) / T
        elif self.kind is Kind.LDA:
            sizes = _class_sizes(self.labels)
            sums = np.zeros((X.shape[0], sizes.size))
            np.add.at(sums.T, self.labels, X.T)
            s = X.sum(axis=1)
            A1 = G - (sums / sizes) @ sums.T
            A2 = G + np.outer(s, s) / T
        elif self.kind is Kind.LPP:
            deg = self.degrees
            XD = X * deg
            A2 = XD @ X.T
            A1 = A2 - (self.adjacency @ X.T).T @ X.T
        else:
            dX = np.diff(X, axis=1)
            A1, A2 = dX @ dX.T, G
        return 0.5 * (A1 + A1.T), 0.5 * (A2 + A2.T)

    def precision(self, n: int) -> np.ndarray:
        """Dense T×T prior precision of latent dimension ``n``."""
        return self.Lambda1[n, n] * self.B1 + self.Lambda2[n, n] * self.B2


def prior_weights(kind: Kind, lam, sigma2):
    """Diagonals of (Λ1, Λ2) for one model kind."""
    lam = np.asarray(lam, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if kind is Kind.PCA:
        return (lam ** 2 + 1) / sigma2, 2 * lam / sigma2
    return lam / sigma2, (1 - lam) ** 2 / sigma2


def validate_beta(lam, sigma2):
    lam = np.asarray(lam, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if lam.ndim != 1 or sigma2.shape != lam.shape:
        raise DimensionError(f"lambda {lam.shape} and sigma2 {sigma2.shape} must be matching vectors")
    if np.any(lam <= 0) or np.any(lam >= 1):
        raise ConfigurationError("every lambda must lie in (0, 1)")
    if np.any(np.diff(lam) >= 0):
        raise ConfigurationError("lambda must be strictly decreasing")
    if np.any(sigma2 <= 0):
        raise ConfigurationError("sigma2 must be positive")
    return lam, sigma2


def build_prior_operators(kind, data: DataMatrix, spec: Optional[NeighbourhoodSpec], lam,
                          sigma2, check_beta: bool = True) -> PriorOperators:
    """Assemble the prior for ``kind`` over the samples of ``data``."""
    kind = Kind(kind)
    spec = spec or NeighbourhoodSpec.default_for(kind)
    if spec.kind is not _REQUIRED[kind]:
        raise ConfigurationError(
            f"{kind.value} requires a {_REQUIRED[kind].value} neighbourhood, got {spec.kind.value}")
    if check_beta:
        lam, sigma2 = validate_beta(lam, sigma2)
    l1, l2 = prior_weights(kind, lam, sigma2)
    T = data.n_samples
    notes = []
    labels = adjacency = None
    if kind is Kind.LDA:
        if data.labels is None:
            raise ConfigurationError("LDA requires class labels")
        labels = data.labels
        singles = np.flatnonzero(_class_sizes(labels) == 1)
        if singles.size:
            msg = f"classes with a single member: {singles.tolist()}"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
    elif kind is Kind.LPP:
        adjacency, _, _ = knn_graph(data, spec.k, spec.weights, spec.symmetrize, spec.gamma)
    elif kind is Kind.SFA:
        if not data.is_sequence:
            raise ConfigurationError("SFA requires sequential data (is_sequence=True)")
        if T < 3:
            raise DimensionError(f"SFA needs T >= 3, got {T}")
    return PriorOperators(kind, T, np.diag(l1), np.diag(l2), labels, adjacency, tuple(notes))
