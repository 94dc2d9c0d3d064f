"""Hot query kernels with a compiled core and a pure-Python fallback.

The Cython module ``_native`` is preferred when it built successfully;
``_fallback`` implements identical semantics in plain Python. Set the
environment variable ``LOAMKIT_PURE_KERNELS=1`` before import to force the
fallback (used by the benchmark and for debugging).
"""

from __future__ import annotations

import os

from . import _fallback

if os.environ.get("LOAMKIT_PURE_KERNELS", "") not in ("", "0"):
    _impl = _fallback
    COMPILED = False
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = _fallback
        COMPILED = False

kd_knn = _impl.kd_knn
kd_radius = _impl.kd_radius
ikd_build = _impl.ikd_build
ikd_insert = _impl.ikd_insert
ikd_rebalance_find = _impl.ikd_rebalance_find
ikd_knn = _impl.ikd_knn
ikd_radius = _impl.ikd_radius
ikd_collect = _impl.ikd_collect
oct_knn = _impl.oct_knn
oct_collect = _impl.oct_collect


def backend_name() -> str:
    """'native' when the compiled extension is active, else 'fallback'."""
    return "native" if COMPILED else "fallback"
