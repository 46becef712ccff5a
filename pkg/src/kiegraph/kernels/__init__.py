"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the gather/scatter loops (im2col, col2im,
pool/RoI argmax routing) and is used by default when numba imports cleanly.
Set ``KIEGRAPH_KERNELS=numpy`` to force the pure-numpy fallback, or
``KIEGRAPH_KERNELS=numba`` to fail loudly if numba is unavailable.

Both backends implement the same functions with identical semantics
(including argmax tie-breaking); ``benchmarks/bench_kernels.py`` compares
their throughput.
"""

import os

from . import numpy_backend

_requested = os.environ.get("KIEGRAPH_KERNELS", "auto").lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"KIEGRAPH_KERNELS must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_backend
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_w = _impl.conv2d_grad_w
conv2d_grad_x = _impl.conv2d_grad_x
maxpool2x_forward = _impl.maxpool2x_forward
maxpool2x_backward = _impl.maxpool2x_backward
roi_max_forward = _impl.roi_max_forward
roi_max_backward = _impl.roi_max_backward

# Upsampling is a reshape/repeat; numpy is already optimal for it.
upsample2x_forward = numpy_backend.upsample2x_forward
upsample2x_backward = numpy_backend.upsample2x_backward
