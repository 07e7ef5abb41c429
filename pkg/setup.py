"""Build script.

The compiled kernels are optional: if Cython or a C compiler is missing the
package installs anyway and falls back to the pure-Python implementation in
``levikal._kernels._py``.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "levikal._kernels._core",
                ["src/levikal/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    sys.stderr.write(f"levikal: building without compiled kernels ({exc})\n")

setup(ext_modules=ext_modules)
