# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled cyclic Jacobi eigensolver.

Same algorithm, sweep order, and tie-breaking as the pure-Python fallback
in ``_jacobi_py.py``; keep the two in sync.
"""

from libc.math cimport sqrt, fabs

import numpy as np
cimport numpy as cnp

from spdshift.exceptions import NumericalError

cnp.import_array()

OFFDIAG_TOL = 1e-12
MAX_SWEEPS = 100
SIGN_EPS = 1e-12


cdef double _offdiag_norm(double[:, ::1] a, Py_ssize_t d) nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t p, q
    for p in range(d - 1):
        for q in range(p + 1, d):
            acc += 2.0 * a[p, q] * a[p, q]
    return sqrt(acc)


cdef int _sweep(double[:, ::1] a, double[:, ::1] v, Py_ssize_t d) nogil:
    cdef Py_ssize_t p, q, k
    cdef double apq, tau, t, c, s, akp, akq, apk, aqk, vkp, vkq
    for p in range(d - 1):
        for q in range(p + 1, d):
            apq = a[p, q]
            if apq == 0.0:
                continue
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            if tau >= 0.0:
                t = 1.0 / (tau + sqrt(1.0 + tau * tau))
            else:
                t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
            c = 1.0 / sqrt(1.0 + t * t)
            s = t * c
            for k in range(d):
                akp = a[k, p]
                akq = a[k, q]
                a[k, p] = c * akp - s * akq
                a[k, q] = s * akp + c * akq
            for k in range(d):
                apk = a[p, k]
                aqk = a[q, k]
                a[p, k] = c * apk - s * aqk
                a[q, k] = s * apk + c * aqk
            a[p, q] = 0.0
            a[q, p] = 0.0
            for k in range(d):
                vkp = v[k, p]
                vkq = v[k, q]
                v[k, p] = c * vkp - s * vkq
                v[k, q] = s * vkp + c * vkq
    return 0


cdef int _solve(double[:, ::1] a, double[:, ::1] v, Py_ssize_t d,
                double tol, int max_sweeps) nogil:
    """Runs sweeps in place; returns sweeps used, or -1 on non-convergence."""
    cdef double norm = 0.0, threshold
    cdef Py_ssize_t p, q
    cdef int sweeps = 0
    for p in range(d):
        for q in range(d):
            norm += a[p, q] * a[p, q]
    threshold = tol * sqrt(norm)
    while _offdiag_norm(a, d) > threshold:
        if sweeps >= max_sweeps:
            return -1
        _sweep(a, v, d)
        sweeps += 1
    return sweeps


def jacobi_eigh(a, double tol=OFFDIAG_TOL, int max_sweeps=MAX_SWEEPS):
    """Compiled counterpart of ``_jacobi_py.jacobi_eigh``."""
    cdef cnp.ndarray[double, ndim=2] aw = np.array(a, dtype=np.float64, order="C")
    cdef Py_ssize_t d = aw.shape[0]
    cdef cnp.ndarray[double, ndim=2] vw = np.eye(d)
    cdef int sweeps = _solve(aw, vw, d, tol, max_sweeps)
    if sweeps < 0:
        raise NumericalError(
            f"Jacobi eigensolver did not converge in {max_sweeps} sweeps",
            iterations=max_sweeps,
        )
    return _finish(aw, vw, d)


cdef _finish(cnp.ndarray[double, ndim=2] a, cnp.ndarray[double, ndim=2] v,
             Py_ssize_t d):
    cdef cnp.ndarray[double, ndim=1] values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    cdef cnp.ndarray[double, ndim=2] vectors = np.ascontiguousarray(v[:, order])
    cdef Py_ssize_t j, k
    for j in range(d):
        for k in range(d):
            if fabs(vectors[k, j]) > SIGN_EPS:
                if vectors[k, j] < 0.0:
                    vectors[:, j] = -vectors[:, j]
                break
    return values, vectors


def jacobi_eigh_batch(a, double tol=OFFDIAG_TOL, int max_sweeps=MAX_SWEEPS):
    """Batched variant: ``a`` has shape (n, d, d)."""
    cdef cnp.ndarray[double, ndim=3] aw = np.array(a, dtype=np.float64, order="C")
    cdef Py_ssize_t n = aw.shape[0], d = aw.shape[1], i
    cdef cnp.ndarray[double, ndim=2] values = np.empty((n, d))
    cdef cnp.ndarray[double, ndim=3] vectors = np.empty((n, d, d))
    cdef cnp.ndarray[double, ndim=2] vw
    cdef int sweeps
    for i in range(n):
        vw = np.eye(d)
        sweeps = _solve(aw[i], vw, d, tol, max_sweeps)
        if sweeps < 0:
            raise NumericalError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
                f"(batch element {i})",
                iterations=max_sweeps,
            )
        values[i], vectors[i] = _finish(np.asarray(aw[i]), vw, d)
    return values, vectors
