"""Kernel backend selection.

The compiled Cython extension is used when it importable; otherwise the
numpy fallback takes over. ``NEWSGRAPH_KERNELS=python`` or ``=compiled``
forces a backend (the latter raises if the extension was not built).
"""
import os

from . import pybackend as _python

try:
    from . import _ckern as _compiled
except ImportError:
    _compiled = None

_forced = os.environ.get("NEWSGRAPH_KERNELS")
if _forced == "python":
    _impl = _python
elif _forced == "compiled":
    if _compiled is None:
        raise ImportError(
            "NEWSGRAPH_KERNELS=compiled but the newsgraph.kernels._ckern "
            "extension is not built; install with the C extension or unset "
            "the variable"
        )
    _impl = _compiled
elif _forced is None:
    _impl = _compiled if _compiled is not None else _python
else:
    raise ImportError(f"unknown NEWSGRAPH_KERNELS value: {_forced!r}")

BACKEND = "compiled" if _impl is _compiled else "python"

mm_stable = _impl.mm_stable
gather_rows = _impl.gather_rows
scatter_add_rows = _impl.scatter_add_rows
segment_softmax = _impl.segment_softmax
segment_softmax_grad = _impl.segment_softmax_grad


def available_backends():
    """Name -> module for every importable backend (used by tests/benchmarks)."""
    out = {"python": _python}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
