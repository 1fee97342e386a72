"""Backend selection for the hot kernels.

The compiled extension is used when it imports; setting
``SNPDENSITY_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

BACKEND = "python"

if not os.environ.get("SNPDENSITY_PURE_PYTHON"):
    try:
        from ._ckernels import basis_matrix, hermite_table, lorenz_rk4

        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from ._pykernels import basis_matrix, hermite_table, lorenz_rk4

__all__ = ["BACKEND", "basis_matrix", "hermite_table", "lorenz_rk4"]
