"""Pure-Python cyclic Jacobi eigensolver for dense symmetric matrices.

Reference implementation and fallback for the compiled kernel in
``_jacobi.pyx``. Both backends run the same sweep order and tie-breaking
rules so results agree to machine precision.
"""

import math

import numpy as np

from spdshift.exceptions import NumericalError

OFFDIAG_TOL = 1e-12
MAX_SWEEPS = 100
SIGN_EPS = 1e-12


def _offdiag_norm(a):
    d = a.shape[0]
    acc = 0.0
    for p in range(d - 1):
        for q in range(p + 1, d):
            acc += 2.0 * a[p, q] * a[p, q]
    return math.sqrt(acc)


def jacobi_eigh(a, tol=OFFDIAG_TOL, max_sweeps=MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` with eigenvalues sorted descending and
    eigenvector columns sign-fixed (first entry with magnitude > 1e-12 is
    made positive). Raises NumericalError if the off-diagonal norm does not
    drop below ``tol * ||a||_F`` within ``max_sweeps`` sweeps.
    """
    a = np.array(a, dtype=np.float64)
    d = a.shape[0]
    v = np.eye(d)
    norm = math.sqrt(float(np.sum(a * a)))
    threshold = tol * norm

    converged = _offdiag_norm(a) <= threshold
    sweeps = 0
    while not converged:
        if sweeps >= max_sweeps:
            raise NumericalError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps",
                iterations=sweeps,
            )
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
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
        sweeps += 1
        converged = _offdiag_norm(a) <= threshold

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = v[:, order]
    for j in range(d):
        for k in range(d):
            if abs(vectors[k, j]) > SIGN_EPS:
                if vectors[k, j] < 0.0:
                    vectors[:, j] = -vectors[:, j]
                break
    return values, vectors


def jacobi_eigh_batch(a, tol=OFFDIAG_TOL, max_sweeps=MAX_SWEEPS):
    """Batched variant: ``a`` has shape (n, d, d); returns stacked
    ``(values (n, d), vectors (n, d, d))``."""
    a = np.asarray(a, dtype=np.float64)
    n, d = a.shape[0], a.shape[1]
    values = np.empty((n, d))
    vectors = np.empty((n, d, d))
    for i in range(n):
        values[i], vectors[i] = jacobi_eigh(a[i], tol=tol, max_sweeps=max_sweeps)
    return values, vectors
