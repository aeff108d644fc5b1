# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward filter / RTS smoother.

Same contract as :func:`capa._chain_py.rts_smooth`; N×N algebra is done
with inline loops since N is small and per-call numpy overhead would
dominate.
"""

import numpy as np
from libc.math cimport log, sqrt, isfinite

from ._chain_py import FilterFailure


cdef int chol(double[:, ::1] A, double[:, ::1] L, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0) or not isfinite(s):
            return -1
        L[j, j] = sqrt(s)
        for i in range(j):
            L[i, j] = 0.0
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return 0


cdef void chol_inverse(double[:, ::1] L, double[:, ::1] out, double[:, ::1] Li,
                       Py_ssize_t n) noexcept nogil:
    # out = (L Lᵀ)⁻¹ = Liᵀ Li with Li = L⁻¹ (lower triangular)
    cdef Py_ssize_t i, j, k, lo
    cdef double s
    for j in range(n):
        for i in range(j):
            Li[i, j] = 0.0
        Li[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, n):
            s = 0.0
            for k in range(j, i):
                s += L[i, k] * Li[k, j]
            Li[i, j] = -s / L[i, i]
    for i in range(n):
        for j in range(i + 1):
            s = 0.0
            lo = i if i > j else j
            for k in range(lo, n):
                s += Li[k, i] * Li[k, j]
            out[i, j] = s
            out[j, i] = s


cdef double logdiag(double[:, ::1] L, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += log(L[i, i])
    return 2.0 * s


cdef inline double _dot(double[::1] a, double[:] b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


def rts_smooth(h, J, lam, q, p1):
    cdef double[:, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef double[:, ::1] Jv = np.ascontiguousarray(J, dtype=np.float64)
    cdef double[::1] lv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[::1] p1v = np.ascontiguousarray(p1, dtype=np.float64)
    cdef Py_ssize_t T = hv.shape[0], N = hv.shape[1]
    cdef Py_ssize_t t, i, j, k

    mp_a = np.zeros((T, N))
    mf_a = np.empty((T, N))
    Pf_a = np.empty((T, N, N))
    Ppi_a = np.empty((T, N, N))
    ms_a = np.empty((T, N))
    Ps_a = np.empty((T, N, N))
    cross_a = np.empty((T - 1 if T > 1 else 0, N, N))
    cdef double[:, ::1] mp = mp_a, mf = mf_a, ms = ms_a
    cdef double[:, :, ::1] Pf = Pf_a, Ppi = Ppi_a, Ps = Ps_a, cross = cross_a

    Pp_a = np.diag(np.asarray(p1v))
    cdef double[:, ::1] Pp = Pp_a
    cdef double[:, ::1] L = np.zeros((N, N)), Li = np.zeros((N, N))
    cdef double[:, ::1] Prec = np.zeros((N, N))
    cdef double[:, ::1] G = np.zeros((N, N)), A = np.zeros((N, N))
    cdef double[:, ::1] B = np.zeros((N, N)), S = np.zeros((N, N))
    cdef double[::1] m = np.zeros(N), g = np.zeros(N), dm = np.zeros(N)
    cdef double part = 0.0, s, ld
    cdef int fail_t = -1

    with nogil:
        for t in range(T):
            if chol(Pp, L, N) != 0:
                fail_t = t
                break
            ld = logdiag(L, N)
            chol_inverse(L, Ppi[t], Li, N)
            for i in range(N):
                for j in range(N):
                    Prec[i, j] = Ppi[t, i, j] + Jv[i, j]
            if chol(Prec, L, N) != 0:
                fail_t = t
                break
            ld += logdiag(L, N)
            chol_inverse(L, Pf[t], Li, N)
            # g = h_t - J m ; part += ld - 2 mᵀh + mᵀ J m - gᵀ P g
            s = 0.0
            for i in range(N):
                g[i] = hv[t, i]
                for j in range(N):
                    g[i] -= Jv[i, j] * m[j]
                s += m[i] * (g[i] - hv[t, i])  # mᵀ(h - Jm - h) = -mᵀJm
            part += ld - 2.0 * _dot(m, hv[t], N) - s
            for i in range(N):
                mp[t, i] = m[i]
                dm[i] = 0.0
                for j in range(N):
                    dm[i] += Pf[t, i, j] * g[j]
                part -= g[i] * dm[i]
                mf[t, i] = m[i] + dm[i]
            for i in range(N):
                m[i] = lv[i] * mf[t, i]
                for j in range(N):
                    Pp[i, j] = lv[i] * Pf[t, i, j] * lv[j]
                Pp[i, i] += qv[i]

        if fail_t < 0:
            for i in range(N):
                ms[T - 1, i] = mf[T - 1, i]
                for j in range(N):
                    Ps[T - 1, i, j] = Pf[T - 1, i, j]
            for t in range(T - 2, -1, -1):
                # G = Pf_t Λ Pp_{t+1}⁻¹
                for i in range(N):
                    for j in range(N):
                        s = 0.0
                        for k in range(N):
                            s += Pf[t, i, k] * lv[k] * Ppi[t + 1, k, j]
                        G[i, j] = s
                for i in range(N):
                    dm[i] = ms[t + 1, i] - mp[t + 1, i]
                for i in range(N):
                    s = mf[t, i]
                    for j in range(N):
                        s += G[i, j] * dm[j]
                    ms[t, i] = s
                # A = I - G Λ ; S = A Pf Aᵀ + G Q Gᵀ + G Ps_{t+1} Gᵀ
                for i in range(N):
                    for j in range(N):
                        A[i, j] = (1.0 if i == j else 0.0) - G[i, j] * lv[j]
                for i in range(N):
                    for j in range(N):
                        s = 0.0
                        for k in range(N):
                            s += A[i, k] * Pf[t, k, j]
                        B[i, j] = s
                for i in range(N):
                    for j in range(N):
                        s = 0.0
                        for k in range(N):
                            s += B[i, k] * A[j, k]
                        S[i, j] = s
                for i in range(N):
                    for j in range(N):
                        s = 0.0
                        for k in range(N):
                            s += G[i, k] * Ps[t + 1, k, j]
                        B[i, j] = s
                for i in range(N):
                    for j in range(N):
                        s = 0.0
                        for k in range(N):
                            s += (B[i, k] + G[i, k] * qv[k]) * G[j, k]
                        S[i, j] += s
                for i in range(N):
                    for j in range(N):
                        Ps[t, i, j] = 0.5 * (S[i, j] + S[j, i])
                # cross_t = Ps_{t+1} Gᵀ
                for i in range(N):
                    for j in range(N):
                        s = 0.0
                        for k in range(N):
                            s += Ps[t + 1, i, k] * G[j, k]
                        cross[t, i, j] = s

    if fail_t >= 0:
        raise FilterFailure(fail_t)
    return ms_a, Ps_a, cross_a, -0.5 * part
