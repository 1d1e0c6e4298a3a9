"""Build script: compiles the optional Cython kernel extension.

If Cython or a C compiler is unavailable, the package installs without the
extension and falls back to the NumPy kernels at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/brflow/kernels/_impl_cy.pyx"],
        compiler_directives={"language_level": 3},
    )
    include_dirs = [numpy.get_include()]
    for ext in ext_modules:
        ext.include_dirs = include_dirs
except Exception as exc:  # pragma: no cover - environment dependent
    print(f"skipping Cython extension build: {exc}", file=sys.stderr)
    ext_modules = []

setup(ext_modules=ext_modules)
