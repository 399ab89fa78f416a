"""Stepping-kernel backend selection.

The hot inner loops (walk stepping, Euler-Maruyama stepping) exist twice:
compiled Cython kernels in ``_core`` and a vectorized NumPy fallback in
``_fallback``.  Both consume per-replica noise streams in identical block
sizes and order, so results agree across backends up to floating-point
association and are bit-reproducible within a backend.

Selection happens at import time; set ``DRIFTWALK_BACKEND=python`` or
``=cython`` to force a backend (forcing ``cython`` raises if the extension
is missing).
"""

import os

from ._fallback import BLOCK, draw_block

_requested = os.environ.get("DRIFTWALK_BACKEND", "").strip().lower()

if _requested in ("", "cython"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from . import _fallback as _impl

        BACKEND = "python"
elif _requested in ("python", "numpy", "fallback"):
    from . import _fallback as _impl

    BACKEND = "python"
else:
    raise ValueError(f"unknown DRIFTWALK_BACKEND={_requested!r}")

run_walk_batch = _impl.run_walk_batch
run_em_batch = _impl.run_em_batch

__all__ = ["BACKEND", "BLOCK", "draw_block", "run_walk_batch", "run_em_batch"]
