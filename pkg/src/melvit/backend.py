"""Kernel backend selection.

The convolution and pooling inner loops exist twice: a numba ``@njit``
implementation and a pure-numpy one with identical semantics, selected once
at import time by the ``MELVIT_BACKEND`` environment variable (``numba`` or
``numpy``). Default is numpy: on a single core, BLAS-backed im2col wins
convolution by enough to dominate end to end, even though the jitted pooling
kernels are several times faster (see ``benchmarks/bench_kernels.py``).
"""

import os

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

_requested = os.environ.get("MELVIT_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"MELVIT_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )
if _requested == "numba" and not HAVE_NUMBA:
    raise RuntimeError("MELVIT_BACKEND=numba but numba is not installed")

BACKEND = _requested if _requested else "numpy"

if BACKEND == "numba":
    from . import _kernels_numba as kernels
else:
    from . import _kernels_numpy as kernels

conv2d_forward = kernels.conv2d_forward
conv2d_backward_w = kernels.conv2d_backward_w
conv2d_backward_x = kernels.conv2d_backward_x
maxpool2d_forward = kernels.maxpool2d_forward
maxpool2d_backward = kernels.maxpool2d_backward
