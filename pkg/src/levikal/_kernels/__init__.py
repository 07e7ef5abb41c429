"""Stepping-kernel backend selection.

The compiled extension is preferred when present; setting the environment
variable ``LEVIKAL_PURE_PYTHON=1`` before import forces the pure fallback
(useful for debugging and for the parity tests). Both backends implement the
same three entry points with identical semantics.
"""

from __future__ import annotations

import os

from . import _py

if os.environ.get("LEVIKAL_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _py
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _py

USING_COMPILED = _impl.backend_name() == "cython"

closed_loop_chunk = _impl.closed_loop_chunk
filter_chunk = _impl.filter_chunk
fixed_point_chunk = _impl.fixed_point_chunk

__all__ = [
    "USING_COMPILED",
    "closed_loop_chunk",
    "filter_chunk",
    "fixed_point_chunk",
]
