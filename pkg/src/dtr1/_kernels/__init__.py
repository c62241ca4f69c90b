"""Pixel-kernel backend selection.

Prefers the compiled extension when built; falls back to the numpy
implementation otherwise. Set DTR1_KERNELS=python or DTR1_KERNELS=compiled
to force a backend (forcing `compiled` raises if the extension is absent).
"""

from __future__ import annotations

import os

_requested = os.environ.get("DTR1_KERNELS", "auto").strip().lower()

if _requested in ("auto", "", "c", "compiled"):
    try:
        from . import _masks_c as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested in ("c", "compiled"):
            raise ImportError(
                "DTR1_KERNELS=compiled but the extension is not built; "
                "install with Cython available (see README)"
            )
        from . import masks_py as _impl

        BACKEND = "python"
elif _requested in ("py", "python"):
    from . import masks_py as _impl

    BACKEND = "python"
else:
    raise ValueError(f"unrecognized DTR1_KERNELS value: {_requested!r}")

iou_counts = _impl.iou_counts
boundary_map = _impl.boundary_map
boundary_match_counts = _impl.boundary_match_counts
masked_depth_stats = _impl.masked_depth_stats


def backend() -> str:
    return BACKEND
