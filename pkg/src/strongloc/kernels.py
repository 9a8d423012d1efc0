"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``STRONGLOC_BACKEND=python`` to force the numpy kernels.  Both backends
sum over collocation points in a fixed order, so results are reproducible
run to run (they agree with each other to rounding, not bitwise).
"""

from __future__ import annotations

import os

from . import _kernels_py

_c = None
if os.environ.get("STRONGLOC_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _c
    except ImportError:  # extension not built
        _c = None

BACKEND = "cython" if _c is not None else "python"
_active = _c if _c is not None else _kernels_py

mlp_forward = _kernels_py.mlp_forward
mlp_forward_jac = _kernels_py.mlp_forward_jac
mlp_value_vjp = _kernels_py.mlp_value_vjp
mlp_elastic = _active.mlp_elastic
band_dissipation = _active.band_dissipation


def backends():
    """Mapping of available backend names to kernel modules."""
    out = {"python": _kernels_py}
    if _c is not None:
        out["cython"] = _c
    return out
