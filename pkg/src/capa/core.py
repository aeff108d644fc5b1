"""Shared data model: observations, fitted parameters, latent moments.

Observations are stored column-per-sample, ``values`` has shape (F, T).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class CapaError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(CapaError, ValueError):
    pass


class ConfigurationError(CapaError, ValueError):
    pass


class SingularityError(CapaError, np.linalg.LinAlgError):
    def __init__(self, message, effective_rank=None):
        super().__init__(message)
        self.effective_rank = effective_rank


class NumericError(CapaError, FloatingPointError):
    pass


class ConvergenceError(CapaError, RuntimeError):
    """EM diverged; the partial trace is attached as ``trace``."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class Kind(str, enum.Enum):
    PCA = "pca"
    LDA = "lda"
    LPP = "lpp"
    SFA = "sfa"


class Solver(str, enum.Enum):
    ML = "ml"
    EM = "em"


@dataclass(frozen=True)
class DataMatrix:
    """Centered observations.

    Attributes
    ----------
    values : ndarray, shape (F, T)
        Column-per-sample observations with ``mean`` already subtracted.
    mean : ndarray, shape (F,)
    labels : ndarray of int, shape (T,), optional
        Class ids, every id in ``0..K-1`` present.
    is_sequence : bool
        Columns are consecutive samples of one time series.
    """

    values: np.ndarray
    mean: np.ndarray
    labels: Optional[np.ndarray] = None
    is_sequence: bool = False

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DimensionError(f"values must be 2-D, got shape {self.values.shape}")
        if self.mean.shape != (self.values.shape[0],):
            raise DimensionError(
                f"mean has shape {self.mean.shape}, expected ({self.values.shape[0]},)")
        if self.labels is not None:
            if self.labels.shape != (self.values.shape[1],):
                raise DimensionError(
                    f"labels has shape {self.labels.shape}, expected ({self.values.shape[1]},)")
            present = np.unique(self.labels)
            if present[0] != 0 or not np.array_equal(present, np.arange(present.size)):
                raise ConfigurationError("class ids must cover 0..K-1 with every id present")

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1


def center(data, labels=None, is_sequence=False) -> DataMatrix:
    """Subtract the column mean of ``data`` (shape (F, T)) and keep it."""
    X = np.array(data, dtype=float, copy=True)
    if X.ndim != 2 or X.size == 0:
        raise DimensionError(f"expected a non-empty (F, T) matrix, got shape {X.shape}")
    if X.shape[1] < 2:
        raise DimensionError(f"need at least 2 samples, got T={X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NumericError("data contains non-finite values")
    mean = X.mean(axis=1)
    X -= mean[:, None]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise ConfigurationError("labels must be integers")
        labels = labels.astype(np.int64)
    return DataMatrix(X, mean, labels, bool(is_sequence))


@dataclass(frozen=True)
class ModelParams:
    """Fitted parameter set.

    ``W`` is stored in the solver's native shape: an (N, F) matrix of
    projection rows for ML fits and an (F, N) loading for EM fits.
    """

    kind: Kind
    solver: Solver
    W: np.ndarray
    sigma_x2: float
    lambda_: np.ndarray
    sigma2: np.ndarray
    data_mean: np.ndarray
    neighbourhood: Optional[object] = None
    fit_meta: dict = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return int(self.lambda_.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.data_mean.shape[0])

    @property
    def loading(self) -> np.ndarray:
        """(F, N) generative loading; only defined for EM fits."""
        if self.solver is not Solver.EM:
            raise ConfigurationError("ML fits store projection rows, not a loading")
        return self.W

    def prior_variance(self) -> np.ndarray:
        """Diagonal of the per-sample prior covariance used for inference."""
        from .em import mean_field_variance

        if self.kind is Kind.SFA:
            # stationary marginal of the AR(1) chain
            return self.sigma2 / (1.0 - self.lambda_ ** 2)
        return mean_field_variance(self.kind, self.lambda_, self.sigma2)


@dataclass(frozen=True)
class LatentMoments:
    """Posterior moments of the latents.

    ``cov`` is either one (N, N) matrix shared by every sample (mean-field
    E-step) or a stack of shape (T, N, N) (chain smoothing).
    """

    mean: np.ndarray
    cov: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.mean.shape[1]

    @property
    def shared(self) -> bool:
        return self.cov.ndim == 2

    @property
    def second_moment(self) -> np.ndarray:
        """E[y_i y_i^T] for every sample, shape (T, N, N)."""
        outer = np.einsum("it,jt->tij", self.mean, self.mean)
        return outer + (self.cov[None] if self.shared else self.cov)

    def second_moment_sum(self) -> np.ndarray:
        cov_sum = self.n_samples * self.cov if self.shared else self.cov.sum(axis=0)
        return self.mean @ self.mean.T + cov_sum

    def second_moment_diag(self) -> np.ndarray:
        """E[y_{n,i}^2] as an (N, T) array."""
        var = np.diag(self.cov)[:, None] if self.shared else np.diagonal(self.cov, axis1=1, axis2=2).T
        return self.mean ** 2 + var


def check_input(params: ModelParams, data: DataMatrix) -> None:
    if data.n_features != params.n_features:
        raise DimensionError(
            f"data has F={data.n_features} (shape {data.values.shape}) but the model "
            f"expects F={params.n_features} (W shape {params.W.shape})")


def projection_matrix(params: ModelParams) -> np.ndarray:
    """(N, F) linear map taking a centered sample to its latent estimate.

    EM fits use the posterior mean with no mean-field contribution, which
    is the only rule available for points outside the training set.
    """
    if params.solver is Solver.ML:
        return params.W
    W = params.W
    prec = W.T @ W + np.diag(params.sigma_x2 / params.prior_variance())
    return np.linalg.solve(prec, W.T)


def project(params: ModelParams, data: DataMatrix) -> np.ndarray:
    """Latent coordinates (N, T) of ``data``, which must be centered with
    ``params.data_mean``."""
    check_input(params, data)
    return projection_matrix(params) @ data.values


def center_with(params: ModelParams, raw: np.ndarray) -> DataMatrix:
    """Center raw (F, T) observations with the model's stored mean."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] != params.n_features:
        raise DimensionError(
            f"input has shape {raw.shape}, model expects F={params.n_features}")
    return DataMatrix(raw - params.data_mean[:, None], params.data_mean.copy())
