# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: SplitMix64 streams, Fisher-Yates, cyclic Jacobi.

Every routine here has a bit-compatible (PRNG, shuffle) or
tolerance-compatible (Jacobi) twin in ``atdl._fallback``.
"""
import numpy as np

from libc.math cimport fabs, sqrt
from libc.stdint cimport int64_t, uint64_t

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def splitmix_uniform(uint64_t seed, uint64_t start, Py_ssize_t n):
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef uint64_t state = seed + (start + 1) * GAMMA
    with nogil:
        for i in range(n):
            o[i] = <double>(_mix64(state) >> 11) * TWO_M53
            state = state + GAMMA
    return out


def splitmix_mask(uint64_t seed, uint64_t start, Py_ssize_t n, double rate):
    """Keep-mask: 1.0 where the draw is >= rate, 0.0 otherwise."""
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef uint64_t state = seed + (start + 1) * GAMMA
    with nogil:
        for i in range(n):
            o[i] = 1.0 if (<double>(_mix64(state) >> 11) * TWO_M53) >= rate else 0.0
            state = state + GAMMA
    return out


def fisher_yates(int64_t[::1] perm, const double[::1] draws):
    cdef Py_ssize_t n = perm.shape[0]
    cdef Py_ssize_t i, j
    cdef int64_t tmp
    with nogil:
        for i in range(n - 1, 0, -1):
            j = <Py_ssize_t>(draws[n - 1 - i] * (i + 1))
            if j > i:
                j = i
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp


cdef inline double _offdiag_norm(double[:, ::1] a, Py_ssize_t n) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += a[i, j] * a[i, j]
    return sqrt(acc)


def jacobi_eigh(double[:, ::1] a, const int64_t[:, :, ::1] schedule, double tol, int max_sweeps):
    """Round-robin cyclic Jacobi on a C-contiguous symmetric copy ``a`` (modified).

    Returns (eigenvalues, eigenvectors as columns, sweeps used, converged flag).
    """
    cdef Py_ssize_t n = a.shape[0]
    v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t steps = schedule.shape[0]
    cdef Py_ssize_t npairs = schedule.shape[1]
    cdef Py_ssize_t st, k, r, p, q
    cdef double app, aqq, apq, theta, t, c, s, x, y
    cdef double fro = 0.0
    cdef int sweep = 0
    cdef bint converged = False
    cdef double[::1] cs = np.empty(npairs, dtype=np.float64)
    cdef double[::1] sn = np.empty(npairs, dtype=np.float64)

    with nogil:
        for p in range(n):
            for q in range(n):
                fro += a[p, q] * a[p, q]
        fro = sqrt(fro)
        while True:
            if fro == 0.0 or _offdiag_norm(a, n) <= tol * fro:
                converged = True
                break
            if sweep >= max_sweeps:
                break
            for st in range(steps):
                # angles first: pairs in a step are disjoint, so each angle only
                # depends on entries untouched by the other rotations of the step
                for k in range(npairs):
                    p = schedule[st, k, 0]
                    q = schedule[st, k, 1]
                    cs[k] = 1.0
                    sn[k] = 0.0
                    if p >= n or q >= n:
                        continue
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    app = a[p, p]
                    aqq = a[q, q]
                    theta = (aqq - app) / (2.0 * apq)
                    if fabs(theta) > 1e150:
                        t = 0.5 / theta
                    elif theta >= 0.0:
                        t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                    else:
                        t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                    c = 1.0 / sqrt(t * t + 1.0)
                    cs[k] = c
                    sn[k] = t * c
                for k in range(npairs):
                    if sn[k] == 0.0:
                        continue
                    p = schedule[st, k, 0]
                    q = schedule[st, k, 1]
                    c = cs[k]
                    s = sn[k]
                    for r in range(n):
                        x = a[r, p]
                        y = a[r, q]
                        a[r, p] = c * x - s * y
                        a[r, q] = s * x + c * y
                for k in range(npairs):
                    if sn[k] == 0.0:
                        continue
                    p = schedule[st, k, 0]
                    q = schedule[st, k, 1]
                    c = cs[k]
                    s = sn[k]
                    for r in range(n):
                        x = a[p, r]
                        y = a[q, r]
                        a[p, r] = c * x - s * y
                        a[q, r] = s * x + c * y
                    for r in range(n):
                        x = v[r, p]
                        y = v[r, q]
                        v[r, p] = c * x - s * y
                        v[r, q] = s * x + c * y
            sweep += 1

    w = np.array([a[i, i] for i in range(n)], dtype=np.float64)
    return w, v_arr, sweep, converged
