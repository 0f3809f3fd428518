"""Backend selection for the coordinate-descent kernels.

The compiled extension is used when it imports; setting
``COVDET_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _kernels_py
from ._kernels_py import NumericalFailure

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("COVDET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython" or "python"), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    out = ["python"]
    try:
        from . import _kernels  # noqa: F401
        out.insert(0, "cython")
    except ImportError:
        pass
    return out


coord_stats = _impl.coord_stats
rank_one_update = _impl.rank_one_update
solve_exact = _impl.solve_exact
solve_inexact = _impl.solve_inexact
init_mu = _impl.init_mu
sweep = _impl.sweep

__all__ = ["BACKEND", "NumericalFailure", "get_backend", "available_backends", "coord_stats",
           "rank_one_update", "solve_exact", "solve_inexact", "init_mu", "sweep"]
