"""Kernel selection: the compiled extension if importable, else the
interpreted fallback. Set LORENTZ_EMBED_PURE=1 to force the fallback."""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("LORENTZ_EMBED_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

floyd_warshall = _impl.floyd_warshall
batch_min_eigenvalue = _impl.batch_min_eigenvalue
polyline_at = _impl.polyline_at

__all__ = ["BACKEND", "floyd_warshall", "batch_min_eigenvalue", "polyline_at"]
