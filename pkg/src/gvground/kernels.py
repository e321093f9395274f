"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``GVGROUND_PURE_PYTHON=1`` to force the fallback.
"""
import os

from gvground import _fallback

if os.environ.get("GVGROUND_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from gvground import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

sample_bilinear = _impl.sample_bilinear
deform_gather = _impl.deform_gather
greedy_select = _impl.greedy_select
linear_sum_assignment = _impl.linear_sum_assignment

__all__ = [
    "BACKEND",
    "sample_bilinear",
    "deform_gather",
    "greedy_select",
    "linear_sum_assignment",
]
