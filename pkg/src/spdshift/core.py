"""Dense linear algebra on the SPD manifold under the affine-invariant metric.

All functions operate on plain float64 numpy arrays. Symmetric matrices are
validated and stored exactly symmetric; SPD inputs must have all eigenvalues
above ``EIG_FLOOR`` (violations raise, they are never clamped). The
eigendecomposition backend is a deterministic cyclic Jacobi solver
(``spdshift._kernels``), so repeated calls on identical inputs are
bit-reproducible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from spdshift import _kernels
from spdshift.exceptions import DomainError, ShapeError

EIG_FLOOR = 1e-10
SYM_TOL = 1e-12
SQRT2 = math.sqrt(2.0)


class ExtrapolationWarning(UserWarning):
    """Geodesic parameter outside [0, 1]: the result extrapolates beyond
    the segment between the endpoints."""


def sym_matrix(a) -> np.ndarray:
    """Validate a square symmetric matrix and return it exactly symmetrized.

    Asymmetry beyond ``SYM_TOL`` (relative to the max entry) raises ShapeError.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if float(np.max(np.abs(a - a.T))) > SYM_TOL * scale:
        raise ShapeError("matrix is not symmetric within tolerance 1e-12")
    return 0.5 * (a + a.T)


def spd_matrix(a) -> np.ndarray:
    """Validate a symmetric positive definite matrix (all eigenvalues above
    ``EIG_FLOOR``) and return it exactly symmetrized."""
    s = sym_matrix(a)
    values, _ = _kernels.jacobi_eigh(s)
    if values[-1] <= EIG_FLOOR:
        raise DomainError(
            f"matrix is not positive definite: min eigenvalue {values[-1]:.3e} "
            f"<= floor {EIG_FLOOR:.0e}"
        )
    return s


def is_spd(a) -> bool:
    """True iff ``a`` passes the ``spd_matrix`` checks."""
    try:
        spd_matrix(a)
    except (ShapeError, DomainError):
        return False
    return True


@dataclass(frozen=True)
class EigenDecomposition:
    """Orthogonal eigendecomposition with eigenvalues sorted descending."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def sym_eig(s) -> EigenDecomposition:
    """Deterministic eigendecomposition of a symmetric matrix."""
    s = sym_matrix(s)
    values, vectors = _kernels.jacobi_eigh(s)
    return EigenDecomposition(values=values, vectors=vectors)


# scalar functions applied to eigenvalues; those marked strict demand
# eigenvalues above EIG_FLOOR
_SPD_FUNCS = {
    "log": (np.log, True),
    "sqrt": (np.sqrt, True),
    "inv_sqrt": (lambda v: 1.0 / np.sqrt(v), True),
}


def _check_floor(values, what):
    if values[..., -1].min() <= EIG_FLOOR:
        raise DomainError(
            f"{what}: eigenvalue {values[..., -1].min():.3e} below SPD floor"
        )


def _apply(c, fn, strict, what):
    c = sym_matrix(c)
    values, vectors = _kernels.jacobi_eigh(c)
    if strict:
        _check_floor(values, what)
    return (vectors * fn(values)) @ vectors.T


def spd_log(c) -> np.ndarray:
    """Matrix logarithm of an SPD matrix (symmetric result)."""
    return _apply(c, np.log, True, "log")


def spd_exp(s) -> np.ndarray:
    """Matrix exponential of a symmetric matrix (SPD result)."""
    return _apply(s, np.exp, False, "exp")


def spd_sqrt(c) -> np.ndarray:
    return _apply(c, np.sqrt, True, "sqrt")


def spd_inv_sqrt(c) -> np.ndarray:
    return _apply(c, lambda v: 1.0 / np.sqrt(v), True, "inv_sqrt")


def spd_power(c, t: float) -> np.ndarray:
    """Matrix power ``c**t`` of an SPD matrix."""
    return _apply(c, lambda v: np.power(v, t), True, "power")


def spd_fn(c, f: str, t: float | None = None) -> np.ndarray:
    """Tag-dispatched matrix function: one of log, exp, sqrt, inv_sqrt, power."""
    if f == "exp":
        return spd_exp(c)
    if f == "power":
        if t is None:
            raise ValueError("power requires the exponent t")
        return spd_power(c, t)
    if f in _SPD_FUNCS:
        fn, strict = _SPD_FUNCS[f]
        return _apply(c, fn, strict, f)
    raise ValueError(f"unknown matrix function tag {f!r}")


def _check_same_dim(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _resym(m) -> np.ndarray:
    """Restore exact symmetry of a product that is symmetric in exact
    arithmetic (e.g. W C W with symmetric factors) before validation."""
    return 0.5 * (m + m.T)


def airm_inner(base, s1, s2) -> float:
    """Affine-invariant inner product Tr(C^-1 S1 C^-1 S2) at base point C."""
    cinv = spd_power(base, -1.0)
    return float(np.trace(cinv @ s1 @ cinv @ s2))


def airm_distance(c1, c2) -> float:
    """Geodesic distance ||log(C1^-1/2 C2 C1^-1/2)||_F."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    _check_same_dim(c1, c2)
    w = spd_inv_sqrt(c1)
    return float(np.linalg.norm(spd_log(_resym(w @ c2 @ w))))


def geodesic(c1, c2, t: float) -> np.ndarray:
    """Point C1 #_t C2 on the geodesic from C1 (t=0) to C2 (t=1).

    Values of t outside [0, 1] extrapolate and emit ExtrapolationWarning.
    """
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    _check_same_dim(c1, c2)
    if t < 0.0 or t > 1.0:
        warnings.warn(
            f"geodesic parameter t={t} outside [0, 1]: extrapolating",
            ExtrapolationWarning,
            stacklevel=2,
        )
    r = spd_sqrt(c1)
    rinv = spd_inv_sqrt(c1)
    return _resym(r @ spd_power(_resym(rinv @ c2 @ rinv), t) @ r)


def log_map(base, c) -> np.ndarray:
    """Logarithmic map of C into the tangent space at ``base``."""
    base = np.asarray(base, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    _check_same_dim(base, c)
    r = spd_sqrt(base)
    rinv = spd_inv_sqrt(base)
    return _resym(r @ spd_log(_resym(rinv @ c @ rinv)) @ r)


def exp_map(base, s) -> np.ndarray:
    """Exponential map of tangent vector S at ``base`` (inverse of log_map)."""
    base = np.asarray(base, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    _check_same_dim(base, s)
    r = spd_sqrt(base)
    rinv = spd_inv_sqrt(base)
    return _resym(r @ spd_exp(_resym(rinv @ s @ rinv)) @ r)


def parallel_transport(s, frm, to) -> np.ndarray:
    """Parallel transport of tangent vector S from ``frm`` to ``to``:
    P^T S P with P = (frm^-1 to)^(1/2)."""
    s = np.asarray(s, dtype=np.float64)
    frm = np.asarray(frm, dtype=np.float64)
    to = np.asarray(to, dtype=np.float64)
    _check_same_dim(s, frm)
    _check_same_dim(frm, to)
    # (frm^-1 to)^(1/2) via the SPD similarity frm^-1/2 (frm^-1/2 to frm^-1/2)^1/2 frm^1/2
    r = spd_sqrt(frm)
    rinv = spd_inv_sqrt(frm)
    p = rinv @ spd_sqrt(_resym(rinv @ to @ rinv)) @ r
    return _resym(p.T @ s @ p)


def transport_to_identity(c, mean, t: float) -> np.ndarray:
    """Partial transport mean^(-t/2) C mean^(-t/2) along the geodesic from
    ``mean`` toward the identity (t=1 lands at the identity)."""
    c = np.asarray(c, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    _check_same_dim(c, mean)
    w = spd_power(mean, -0.5 * t)
    return _resym(w @ c @ w)


@lru_cache(maxsize=None)
def _upper_indices(dim: int):
    rows, cols = np.triu_indices(dim)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


def upper_dim(n_coords: int) -> int:
    """Matrix dimension D for a coordinate vector of length D(D+1)/2."""
    d = int((math.isqrt(8 * n_coords + 1) - 1) // 2)
    if d * (d + 1) // 2 != n_coords:
        raise ShapeError(f"{n_coords} is not a triangular number")
    return d


def n_coords(dim: int) -> int:
    return dim * (dim + 1) // 2


def upper(s) -> np.ndarray:
    """Norm-preserving half-vectorization: row-major upper triangle with
    off-diagonal entries scaled by sqrt(2)."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {s.shape}")
    rows, cols, scale = _upper_indices(s.shape[0])
    return s[rows, cols] * scale


def upper_inv(v) -> np.ndarray:
    """Inverse of ``upper``: rebuild the symmetric matrix."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {v.shape}")
    d = upper_dim(v.shape[0])
    rows, cols, scale = _upper_indices(d)
    s = np.zeros((d, d))
    s[rows, cols] = v / scale
    s[cols, rows] = s[rows, cols]
    return s


# ---------------------------------------------------------------------------
# batched helpers for hot paths (stacks of matrices, shape (n, d, d))

def eig_batch(ss):
    ss = np.ascontiguousarray(ss, dtype=np.float64)
    return _kernels.jacobi_eigh_batch(ss)


def _apply_batch(cs, fn, strict, what):
    values, vectors = eig_batch(cs)
    if strict:
        _check_floor(values, what)
    return np.einsum("nik,nk,njk->nij", vectors, fn(values), vectors)


def spd_log_batch(cs) -> np.ndarray:
    return _apply_batch(cs, np.log, True, "log")


def spd_exp_batch(ss) -> np.ndarray:
    return _apply_batch(ss, np.exp, False, "exp")


def upper_batch(ss) -> np.ndarray:
    ss = np.asarray(ss, dtype=np.float64)
    rows, cols, scale = _upper_indices(ss.shape[-1])
    return ss[:, rows, cols] * scale


def upper_inv_batch(vs) -> np.ndarray:
    vs = np.asarray(vs, dtype=np.float64)
    d = upper_dim(vs.shape[-1])
    rows, cols, scale = _upper_indices(d)
    ss = np.zeros((vs.shape[0], d, d))
    ss[:, rows, cols] = vs / scale
    ss[:, cols, rows] = ss[:, rows, cols]
    return ss
