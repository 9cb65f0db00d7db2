"""Pure-numpy reference implementations of the hot kernels.

This module is the fallback lane selected when the compiled extension is
unavailable (or when GECLIP_PURE_PY is set), and it doubles as the oracle
the compiled lane is tested against.  All kernels take and return float64
C-contiguous arrays; matmul stays on BLAS in both lanes.
"""

import numpy as np

GELU_SLOPE = 1.702


def matmul(a, b):
    return np.dot(a, b)


def softmax_rows(x):
    """Row-wise softmax of a 2-D array with max-subtraction."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(y, gy):
    """Backward of softmax_rows given its output y and upstream grad gy."""
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layer_norm(x, gain, bias, eps):
    """Normalize rows of a 2-D array; returns (y, mean, rstd) for backward."""
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = centered * rstd * gain + bias
    return y, mean, rstd


def layer_norm_grad(x, gain, mean, rstd, gy):
    """Backward of layer_norm; returns (gx, ggain, gbias)."""
    n = x.shape[1]
    xhat = (x - mean) * rstd
    gxhat = gy * gain
    gx = rstd / n * (
        n * gxhat
        - gxhat.sum(axis=1, keepdims=True)
        - xhat * (gxhat * xhat).sum(axis=1, keepdims=True)
    )
    ggain = (gy * xhat).sum(axis=0)
    gbias = gy.sum(axis=0)
    return gx, ggain, gbias


def quick_gelu(x):
    return x / (1.0 + np.exp(-GELU_SLOPE * x))


def quick_gelu_grad(x, gy):
    s = 1.0 / (1.0 + np.exp(-GELU_SLOPE * x))
    return gy * (s + x * GELU_SLOPE * s * (1.0 - s))


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, gy):
    return np.where(x > 0.0, gy, 0.0)


def bilinear_resize(grid, out_h, out_w):
    """Resize a 2-D grid with half-pixel-center bilinear sampling."""
    in_h, in_w = grid.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    sy = in_h / out_h
    sx = in_w / out_w
    for i in range(out_h):
        fy = (i + 0.5) * sy - 0.5
        y0 = int(np.floor(fy))
        wy = fy - y0
        y0c = min(max(y0, 0), in_h - 1)
        y1c = min(max(y0 + 1, 0), in_h - 1)
        for j in range(out_w):
            fx = (j + 0.5) * sx - 0.5
            x0 = int(np.floor(fx))
            wx = fx - x0
            x0c = min(max(x0, 0), in_w - 1)
            x1c = min(max(x0 + 1, 0), in_w - 1)
            top = grid[y0c, x0c] * (1.0 - wx) + grid[y0c, x1c] * wx
            bot = grid[y1c, x0c] * (1.0 - wx) + grid[y1c, x1c] * wx
            out[i, j] = top * (1.0 - wy) + bot * wy
    return out
