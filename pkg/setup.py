"""Build script for the compiled eigensolver kernel.

The extension is optional: if compilation fails the package falls back to the
pure-Python kernel at import time (see spdshift._kernels).
"""

import numpy
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "spdshift._kernels._jacobi",
                sources=["src/spdshift/_kernels/_jacobi.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
