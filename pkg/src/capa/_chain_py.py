"""Pure-Python forward filter / RTS smoother (fallback for ``_chain_ext``).

State model ``y_t = diag(lam) y_{t-1} + w_t``, ``w_t ~ N(0, diag(q))``,
``y_1 ~ N(0, diag(p1))``.  The observations enter only through the
information vectors ``h[t] = Wᵀ x_t / σ²`` and ``J = Wᵀ W / σ²``, so each
step costs O(N³) regardless of F.
"""

import numpy as np


class FilterFailure(FloatingPointError):
    def __init__(self, t):
        super().__init__(f"filter covariance became non-finite or indefinite at t={t}")
        self.t = t


def _chol(A, t):
    if not np.all(np.isfinite(A)):
        raise FilterFailure(t)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise FilterFailure(t) from None


def _spd_inv(L):
    Li = np.linalg.solve(L, np.eye(L.shape[0]))
    return Li.T @ Li


def rts_smooth(h, J, lam, q, p1):
    """Return ``(mean, cov, cross, ll_part)``.

    ``mean`` is (T, N), ``cov`` (T, N, N), ``cross[t] = Cov(y_{t+1}, y_t)``
    with shape (T-1, N, N).  ``ll_part`` is the observation-dependent part
    of the log-likelihood; the caller adds ``-1/2 (T F log 2πσ² + Σ‖x_t‖²/σ²)``.
    """
    h = np.ascontiguousarray(h, dtype=float)
    T, N = h.shape
    lam = np.asarray(lam, dtype=float)
    q = np.asarray(q, dtype=float)
    mp = np.zeros((T, N))
    Pp_inv = np.empty((T, N, N))
    mf = np.empty((T, N))
    Pf = np.empty((T, N, N))
    Pp = np.diag(np.asarray(p1, dtype=float))
    m = np.zeros(N)
    part = 0.0
    for t in range(T):
        Lp = _chol(Pp, t)
        Pinv = _spd_inv(Lp)
        Pp_inv[t] = Pinv
        Lf = _chol(Pinv + J, t)
        P = _spd_inv(Lf)
        P = 0.5 * (P + P.T)
        g = h[t] - J @ m
        part += (2.0 * np.sum(np.log(np.diag(Lp))) + 2.0 * np.sum(np.log(np.diag(Lf)))
                 - 2.0 * m @ h[t] + m @ J @ m - g @ P @ g)
        mp[t] = m
        mf[t] = m + P @ g
        Pf[t] = P
        m = lam * mf[t]
        Pp = lam[:, None] * P * lam[None, :] + np.diag(q)

    ms = np.empty((T, N))
    Ps = np.empty((T, N, N))
    cross = np.empty((max(T - 1, 0), N, N))
    ms[-1] = mf[-1]
    Ps[-1] = Pf[-1]
    eye = np.eye(N)
    for t in range(T - 2, -1, -1):
        G = (Pf[t] * lam[None, :]) @ Pp_inv[t + 1]
        ms[t] = mf[t] + G @ (ms[t + 1] - mp[t + 1])
        A = eye - G * lam[None, :]
        S = A @ Pf[t] @ A.T + (G * q[None, :]) @ G.T + G @ Ps[t + 1] @ G.T
        Ps[t] = 0.5 * (S + S.T)
        cross[t] = Ps[t + 1] @ G.T
    return ms, Ps, cross, -0.5 * part
