"""Eigensolver kernel with backend selection.

The compiled Cython kernel is used when available; otherwise (or when the
environment variable ``SPDSHIFT_FORCE_PYTHON`` is set to a non-empty value)
the pure-Python implementation is used. Both implement the same algorithm
with identical sweep order and conventions.
"""

import os

from spdshift._kernels import _jacobi_py

if os.environ.get("SPDSHIFT_FORCE_PYTHON"):
    _impl = _jacobi_py
    BACKEND = "python"
else:
    try:
        from spdshift._kernels import _jacobi as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _jacobi_py
        BACKEND = "python"

jacobi_eigh = _impl.jacobi_eigh
jacobi_eigh_batch = _impl.jacobi_eigh_batch

OFFDIAG_TOL = _jacobi_py.OFFDIAG_TOL
MAX_SWEEPS = _jacobi_py.MAX_SWEEPS

__all__ = ["jacobi_eigh", "jacobi_eigh_batch", "BACKEND", "OFFDIAG_TOL", "MAX_SWEEPS"]
