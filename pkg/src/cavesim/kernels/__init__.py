"""Kernel backend selection: compiled extension when built, numpy fallback otherwise.

Set CAVESIM_FORCE_PY=1 to force the pure-Python path (used by the benchmark
and the backend-equivalence tests).
"""

from __future__ import annotations

import os

from . import ref as _ref

if os.environ.get("CAVESIM_FORCE_PY"):
    _impl = _ref
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _ref

BACKEND = _impl.BACKEND
segment_wall_count = _impl.segment_wall_count
raycast = _impl.raycast
classify = _impl.classify
footprint_clear = _impl.footprint_clear
clearance_to_fatal = _impl.clearance_to_fatal
nearest_observed = _impl.nearest_observed
