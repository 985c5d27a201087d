"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback is. Set ``QAKT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("QAKT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_ext as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

context_distance = _impl.context_distance
scatter_add_rows = _impl.scatter_add_rows
best_assignment = _impl.best_assignment
monotonic_weights = _impl.monotonic_weights
monotonic_weights_backward = _impl.monotonic_weights_backward

__all__ = [
    "BACKEND", "context_distance", "scatter_add_rows", "best_assignment",
    "monotonic_weights", "monotonic_weights_backward",
]
