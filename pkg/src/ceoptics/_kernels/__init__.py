"""Event-kernel backend selection.

The compiled extension is preferred when importable; the pure-numpy
reference is the fallback and is always available. Set
CEOPTICS_PURE_PYTHON=1 to force the fallback (used by the equivalence
tests and the benchmark).
"""

import os

from . import reference as _reference

_FORCE_PY = os.environ.get("CEOPTICS_PURE_PYTHON", "") not in ("", "0")

if not _FORCE_PY:
    try:
        from . import _evsim as _compiled
    except ImportError:
        _compiled = None
else:
    _compiled = None

_active = _compiled if _compiled is not None else _reference


def backend_name() -> str:
    return "compiled" if _active is not _reference else "python"


def stream_kernel(logl, times, thresh, refractory, l_ref, t_last):
    return _active.stream_kernel(logl, times, thresh, refractory, l_ref, t_last)


def bin_kernel(logl, times, thresh, refractory, l_ref, t_last, bin_size):
    return _active.bin_kernel(logl, times, thresh, refractory, l_ref, t_last, bin_size)


def get_backends():
    """(name, module) pairs for every available implementation."""
    out = [("python", _reference)]
    if _compiled is not None:
        out.append(("compiled", _compiled))
    return out
