"""Numerical kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``_core``, built from ``_core.pyx``) is selected
at import time when available; otherwise ``fallback`` takes over with
identical semantics. Set ``EQA_FORGE_FORCE_FALLBACK=1`` to force the
numpy path (used by the benchmark and fallback tests).

Exposed kernels: min_hit_param, depth_buffer, fps, ball_query,
segment_blocked. See fallback.py for the contracts.
"""

import os

from . import fallback as _fallback

if os.environ.get("EQA_FORGE_FORCE_FALLBACK", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:  # extension not built; numpy path is fully featured
        _impl = _fallback

IMPL = _impl.IMPL
min_hit_param = _impl.min_hit_param
depth_buffer = _impl.depth_buffer
fps = _impl.fps
ball_query = _impl.ball_query
segment_blocked = _impl.segment_blocked


def using_compiled() -> bool:
    return IMPL == "cython"
