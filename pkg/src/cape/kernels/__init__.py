"""Hot numeric kernels.

The numba path is used when numba imports cleanly; set ``CAPE_NUMBA=0`` to
force the pure-numpy path (both expose identical functions).
"""

import os

from . import _numpy

USE_NUMBA = os.environ.get("CAPE_NUMBA", "1").lower() not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        from . import _numba as _impl
    except ImportError:  # numba missing or broken
        _impl = _numpy
        USE_NUMBA = False
else:
    _impl = _numpy

BACKEND = "numba" if USE_NUMBA else "numpy"

trailing_mean = _impl.trailing_mean
rbf_gram = _impl.rbf_gram
union_width = _impl.union_width
overlap_ratio = _impl.overlap_ratio
rbf_grad_sums = _impl.rbf_grad_sums

__all__ = ["BACKEND", "USE_NUMBA", "trailing_mean", "rbf_gram", "union_width", "overlap_ratio", "rbf_grad_sums"]
