"""Backend selection for the hot kernels.

The compiled extension is preferred when present; setting
PEDROUTE_BACKEND=python forces the pure numpy fallback (useful for
benchmark comparisons and for debugging).
"""

from __future__ import annotations

import os

from . import _core_py

if os.environ.get("PEDROUTE_BACKEND", "").strip().lower() == "python":
    _impl = _core_py
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _core_py

BACKEND = _impl.BACKEND_NAME
dijkstra_grid = _impl.dijkstra_grid
pair_repulsion = _impl.pair_repulsion
