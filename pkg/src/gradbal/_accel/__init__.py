"""Backend dispatch for the hot balancing loops.

Two interchangeable implementations exist: a compiled Cython extension
(``_native``) and a pure-numpy reference (``pyref``). The compiled one is
preferred when built; ``GRADBAL_BACKEND=python`` forces the fallback and
``GRADBAL_BACKEND=compiled`` makes a missing extension a hard error.
"""

import os

from . import pyref

_requested = os.environ.get("GRADBAL_BACKEND", "auto").strip().lower() or "auto"
if _requested not in ("auto", "python", "compiled"):
    raise ValueError(f"GRADBAL_BACKEND must be auto, python or compiled, got {_requested!r}")

if _requested == "python":
    _native = None
else:
    try:
        from . import _native
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "GRADBAL_BACKEND=compiled but gradbal._accel._native is not built; "
                "reinstall with Cython and a C compiler available"
            ) from None
        _native = None

impl = _native if _native is not None else pyref
BACKEND = "compiled" if _native is not None else "python"


def available_backends():
    names = ["python"]
    if _native is not None:
        names.append("compiled")
    return names


def get_impl(name=None):
    """Return a kernel module by backend name; None or 'auto' gives the active one."""
    if name in (None, "auto"):
        return impl
    if name == "python":
        return pyref
    if name == "compiled":
        if _native is None:
            raise ValueError("compiled backend is not available in this install")
        return _native
    raise ValueError(f"unknown backend {name!r}")
