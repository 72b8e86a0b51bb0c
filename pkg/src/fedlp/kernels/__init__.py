"""Numeric kernels behind the training loop and the Monte-Carlo verifier.

Two interchangeable backends: numba-jitted loops (default) and pure numpy.
Selection happens once at import time via the FEDLP_BACKEND environment
variable: "numba", "numpy", or "auto" (default; numba if importable).

Both backends are deterministic for fixed inputs. They are not guaranteed to
agree bit-for-bit with each other; reproducibility contracts hold within a
backend. benchmarks/bench_backends.py compares their throughput.
"""

from __future__ import annotations

import os

_requested = os.environ.get("FEDLP_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"FEDLP_BACKEND must be 'numba', 'numpy' or 'auto', got {_requested!r}"
    )

if _requested == "numpy":
    from . import numpy_backend as active

    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as active

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_backend as active

        BACKEND = "numpy"

affine_forward = active.affine_forward
relu_forward = active.relu_forward
softmax_forward = active.softmax_forward
affine_backward = active.affine_backward
relu_backward = active.relu_backward
softmax_xent_grad = active.softmax_xent_grad
xent_loss = active.xent_loss
sgd_update = active.sgd_update
prop1_chunk = active.prop1_chunk

__all__ = [
    "BACKEND",
    "affine_backward",
    "affine_forward",
    "prop1_chunk",
    "relu_backward",
    "relu_forward",
    "sgd_update",
    "softmax_forward",
    "softmax_xent_grad",
    "xent_loss",
]
