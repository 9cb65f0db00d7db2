"""Kernel backend dispatch.

Imports the compiled extension when present; otherwise falls back to the
pure-numpy lane.  Set GECLIP_PURE_PY=1 to force the fallback (used by the
cross-lane agreement tests and the benchmark).
"""

import os

from . import _ref

if os.environ.get("GECLIP_PURE_PY"):
    _impl = _ref
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _ref
        BACKEND = "python"

GELU_SLOPE = _ref.GELU_SLOPE

matmul = _impl.matmul
softmax_rows = _impl.softmax_rows
softmax_rows_grad = _impl.softmax_rows_grad
layer_norm = _impl.layer_norm
layer_norm_grad = _impl.layer_norm_grad
quick_gelu = _impl.quick_gelu
quick_gelu_grad = _impl.quick_gelu_grad
relu = _impl.relu
relu_grad = _impl.relu_grad
bilinear_resize = _impl.bilinear_resize

__all__ = [
    "BACKEND",
    "GELU_SLOPE",
    "matmul",
    "softmax_rows",
    "softmax_rows_grad",
    "layer_norm",
    "layer_norm_grad",
    "quick_gelu",
    "quick_gelu_grad",
    "relu",
    "relu_grad",
    "bilinear_resize",
]
