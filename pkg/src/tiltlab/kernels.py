"""Kernel backend selection.

The compiled extension is used when importable; set ``TILTLAB_PURE_PYTHON=1``
to force the pure-Python twin.
"""
import os

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if os.environ.get("TILTLAB_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_active = BACKENDS[BACKEND]
glauber_steps = _active.glauber_steps
coupled_steps = _active.coupled_steps


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    name = name or BACKEND
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    return BACKENDS[name]
