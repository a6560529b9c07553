"""Kernel selection: compiled extension when built, pure Python otherwise.

Set ``GEOSMOOTH_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _reference

BACKEND = "python"
_impl = _reference

if os.environ.get("GEOSMOOTH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _impl = _reference


def material_update(stress_old, deps, kappa_old, mat_index, table):
    return _impl.material_update(stress_old, deps, kappa_old, mat_index, table)


def cell_stiffness(B, D, w):
    return _impl.cell_stiffness(B, D, w)


def backends():
    """Available implementations keyed by name."""
    out = {"python": _reference}
    try:
        from . import _core
        out["compiled"] = _core
    except ImportError:
        pass
    return out
