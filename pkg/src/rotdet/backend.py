"""Kernel backend selection.

The compiled extension is preferred; set ROTDET_PURE=1 to force the
pure-numpy fallback (useful for benchmarking and debugging).
"""
import os

if os.environ.get("ROTDET_PURE"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels_cy as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

BACKEND_NAME = kernels.NAME

conv2d_forward = kernels.conv2d_forward
conv2d_backward = kernels.conv2d_backward
maxpool_forward = kernels.maxpool_forward
maxpool_backward = kernels.maxpool_backward
