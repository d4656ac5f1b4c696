"""Backend selection for the patch reduction kernels.

The compiled extension ``dispatchkd._kernels`` is used when it imports;
otherwise the numpy fallback is used. Setting ``DISPATCHKD_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("DISPATCHKD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

patch_sums = _impl.patch_sums
expand_patch_values = _impl.expand_patch_values
coverage_counts = _impl.coverage_counts

__all__ = ["BACKEND", "patch_sums", "expand_patch_values", "coverage_counts"]
