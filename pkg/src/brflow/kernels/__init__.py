"""Hot assembly kernels: compiled extension with a NumPy fallback.

The Cython extension is used when it built successfully at install time.
Set ``BRFLOW_PURE_PYTHON=1`` to force the NumPy implementation (used by the
kernel benchmark and the cross-implementation tests).
"""

import os

from . import _impl_py

if os.environ.get("BRFLOW_PURE_PYTHON"):
    _impl = _impl_py
    BACKEND = "python"
else:
    try:
        from . import _impl_cy as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _impl_py
        BACKEND = "python"

bernoulli = _impl.bernoulli
p1_local_stiffness = _impl.p1_local_stiffness
eafe_local_matrices = _impl.eafe_local_matrices

__all__ = ["BACKEND", "bernoulli", "p1_local_stiffness", "eafe_local_matrices"]
