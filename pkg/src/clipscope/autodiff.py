"""Reverse-mode automatic differentiation on float64 numpy arrays.

A ``Tape`` records one closure per executed op while it is active; calling
``Tape.backward(loss)`` replays the closures in exact reverse order.  Each
replay carries gradients in its own flow map and then adds them into every
participating tensor's ``.grad``, so calling backward twice accumulates
exactly two contributions, and backward from two different scalars sums
their fields.  Ops record only when a tape is active *and* at least one
input participates in differentiation, so constant subgraphs cost nothing.

Broadcasting is deliberately narrow: elementwise ops take equal shapes, a
scalar on either side, or a 1-D per-row bias against a 2-D array.  Anything
else raises, keeping gradient bookkeeping trivially auditable.
"""

import numpy as np

from . import _kernels

_ACTIVE_TAPE = None


class Tensor:
    """A float64 ndarray with an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tracked = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() requires a size-1 tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the common arithmetic ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(x):
    """Wrap an array as a tensor that never receives gradient."""
    return Tensor(x)


class Tape:
    """Context manager that records ops for backward replays."""

    def __init__(self):
        self._records = []
        self._open = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("another tape is already active")
        _ACTIVE_TAPE = self
        self._open = True
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        self._open = False
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss):
        """Replay the tape newest-first from d(loss)/d(loss) = 1.

        Gradients flow through a per-call map and are added into ``.grad``
        afterwards, so each backward call contributes exactly once.
        """
        if not isinstance(loss, Tensor):
            raise TypeError("backward expects a Tensor")
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        flow = {}
        _flow_accum(flow, loss, np.ones_like(loss.data))
        for record in reversed(self._records):
            record(flow)
        for t, g in flow.values():
            if t.grad is None:
                t.grad = g
            else:
                t.grad += g


def _recording(*tensors):
    if _ACTIVE_TAPE is None or not _ACTIVE_TAPE._open:
        return False
    return any(t.requires_grad or t._tracked for t in tensors)


def _emit(out, backward_fn):
    out._tracked = True
    _ACTIVE_TAPE._records.append(backward_fn)


def _flow_accum(flow, t, g):
    """Add a gradient contribution for t into the replay's flow map."""
    if not (t.requires_grad or t._tracked):
        return
    entry = flow.get(id(t))
    if entry is None:
        flow[id(t)] = [t, np.array(g, dtype=np.float64, copy=True)]
    else:
        entry[1] += g


def _flow_get(flow, t):
    entry = flow.get(id(t))
    return None if entry is None else entry[1]


def _is_scalar(arr):
    return arr.size == 1


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def _binary_shapes_ok(a, b):
    if a.shape == b.shape:
        return "same"
    if _is_scalar(b.data):
        return "b_scalar"
    if _is_scalar(a.data):
        return "a_scalar"
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return "row_bias"
    raise ValueError(f"unsupported operand shapes {a.shape} and {b.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    kind = _binary_shapes_ok(a, b)
    out = Tensor(a.data + b.data)
    if _recording(a, b):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            if kind == "same":
                _flow_accum(flow, a, g)
                _flow_accum(flow, b, g)
            elif kind == "b_scalar":
                _flow_accum(flow, a, g)
                _flow_accum(flow, b, np.full_like(b.data, g.sum()))
            elif kind == "a_scalar":
                _flow_accum(flow, a, np.full_like(a.data, g.sum()))
                _flow_accum(flow, b, g)
            else:  # row_bias
                _flow_accum(flow, a, g)
                _flow_accum(flow, b, g.sum(axis=0))

        _emit(out, _backward)
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    kind = _binary_shapes_ok(a, b)
    out = Tensor(a.data - b.data)
    if _recording(a, b):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            if kind == "same":
                _flow_accum(flow, a, g)
                _flow_accum(flow, b, -g)
            elif kind == "b_scalar":
                _flow_accum(flow, a, g)
                _flow_accum(flow, b, np.full_like(b.data, -g.sum()))
            elif kind == "a_scalar":
                _flow_accum(flow, a, np.full_like(a.data, g.sum()))
                _flow_accum(flow, b, -g)
            else:
                _flow_accum(flow, a, g)
                _flow_accum(flow, b, -g.sum(axis=0))

        _emit(out, _backward)
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    kind = _binary_shapes_ok(a, b)
    if kind == "row_bias":
        raise ValueError(f"mul does not support row-bias shapes {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data)
    if _recording(a, b):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            if kind == "same":
                _flow_accum(flow, a, g * b.data)
                _flow_accum(flow, b, g * a.data)
            elif kind == "b_scalar":
                _flow_accum(flow, a, g * b.data.reshape(()))
                _flow_accum(flow, b, np.full_like(b.data, (g * a.data).sum()))
            else:
                _flow_accum(flow, a, np.full_like(a.data, (g * b.data).sum()))
                _flow_accum(flow, b, g * a.data.reshape(()))

        _emit(out, _backward)
    return out


def neg(a):
    a = as_tensor(a)
    out = Tensor(-a.data)
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, -g)

        _emit(out, _backward)
    return out


# ---------------------------------------------------------------------------
# Linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(_kernels.matmul(a.data, b.data))
    if _recording(a, b):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, _kernels.matmul(g, b.data.T))
            _flow_accum(flow, b, _kernels.matmul(a.data.T, g))

        _emit(out, _backward)
    return out


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose requires a 2-D tensor, got {a.shape}")
    out = Tensor(a.data.T.copy())
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, g.T)

        _emit(out, _backward)
    return out


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape).copy())
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, g.reshape(a.data.shape))

        _emit(out, _backward)
    return out


def slice_rows(a, start, stop):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"slice_rows requires a 2-D tensor, got {a.shape}")
    out = Tensor(a.data[start:stop].copy())
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            full = np.zeros_like(a.data)
            full[start:stop] = g
            _flow_accum(flow, a, full)

        _emit(out, _backward)
    return out


def slice_cols(a, start, stop):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"slice_cols requires a 2-D tensor, got {a.shape}")
    out = Tensor(a.data[:, start:stop].copy())
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            _flow_accum(flow, a, full)

        _emit(out, _backward)
    return out


def concat_rows(parts):
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        if p.data.ndim != 2:
            raise ValueError(f"concat_rows requires 2-D tensors, got {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    if _recording(*parts):
        sizes = [p.shape[0] for p in parts]

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            ofs = 0
            for p, n in zip(parts, sizes):
                _flow_accum(flow, p, g[ofs : ofs + n])
                ofs += n

        _emit(out, _backward)
    return out


def concat_cols(parts):
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        if p.data.ndim != 2:
            raise ValueError(f"concat_cols requires 2-D tensors, got {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    if _recording(*parts):
        sizes = [p.shape[1] for p in parts]

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            ofs = 0
            for p, n in zip(parts, sizes):
                _flow_accum(flow, p, g[:, ofs : ofs + n])
                ofs += n

        _emit(out, _backward)
    return out


def take_row(a, index):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"take_row requires a 2-D tensor, got {a.shape}")
    out = Tensor(a.data[index].copy())
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            full = np.zeros_like(a.data)
            full[index] = g
            _flow_accum(flow, a, full)

        _emit(out, _backward)
    return out


def take_diag(a):
    a = as_tensor(a)
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"take_diag requires a square 2-D tensor, got {a.shape}")
    out = Tensor(np.diagonal(a.data).copy())
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            full = np.zeros_like(a.data)
            np.fill_diagonal(full, g)
            _flow_accum(flow, a, full)

        _emit(out, _backward)
    return out


def stack_rows(vectors):
    vectors = [as_tensor(v) for v in vectors]
    for v in vectors:
        if v.data.ndim != 1:
            raise ValueError(f"stack_rows requires 1-D tensors, got {v.shape}")
    out = Tensor(np.stack([v.data for v in vectors], axis=0))
    if _recording(*vectors):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            for i, v in enumerate(vectors):
                _flow_accum(flow, v, g[i])

        _emit(out, _backward)
    return out


def embedding(table, ids):
    """Look up rows of ``table`` by integer id; backward scatter-adds."""
    table = as_tensor(table)
    if table.data.ndim != 2:
        raise ValueError(f"embedding requires a 2-D table, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"embedding requires a 1-D id list, got {ids.shape}")
    out = Tensor(table.data[ids].copy())
    if _recording(table):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            _flow_accum(flow, table, full)

        _emit(out, _backward)
    return out


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def tsum(a):
    a = as_tensor(a)
    out = Tensor(a.data.sum())
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, np.full_like(a.data, g.reshape(())))

        _emit(out, _backward)
    return out


def tmean(a):
    a = as_tensor(a)
    out = Tensor(a.data.mean())
    if _recording(a):
        n = a.data.size

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, np.full_like(a.data, g.reshape(()) / n))

        _emit(out, _backward)
    return out


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot requires equal 1-D shapes, got {a.shape} and {b.shape}")
    out = Tensor(np.dot(a.data, b.data))
    if _recording(a, b):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            s = g.reshape(())
            _flow_accum(flow, a, s * b.data)
            _flow_accum(flow, b, s * a.data)

        _emit(out, _backward)
    return out


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def softmax(a):
    """Row-wise softmax of a 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"softmax requires a 2-D tensor, got {a.shape}")
    out = Tensor(_kernels.softmax_rows(a.data))
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, _kernels.softmax_rows_grad(out.data, g))

        _emit(out, _backward)
    return out


def log_softmax(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"log_softmax requires a 2-D tensor, got {a.shape}")
    p = _kernels.softmax_rows(a.data)
    out = Tensor(np.log(p))
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, g - p * g.sum(axis=1, keepdims=True))

        _emit(out, _backward)
    return out


def texp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, g * out.data)

        _emit(out, _backward)
    return out


def tlog(a):
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, g / a.data)

        _emit(out, _backward)
    return out


def relu(a):
    a = as_tensor(a)
    out = Tensor(_kernels.relu(a.data))
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, _kernels.relu_grad(a.data, g))

        _emit(out, _backward)
    return out


def quick_gelu(a):
    """x * sigmoid(1.702 x), the smooth gate used inside the encoder MLPs."""
    a = as_tensor(a)
    out = Tensor(_kernels.quick_gelu(a.data))
    if _recording(a):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, _kernels.quick_gelu_grad(a.data, g))

        _emit(out, _backward)
    return out


def clamp(a, lo, hi):
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    if _recording(a):
        mask = (a.data >= lo) & (a.data <= hi)

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, a, np.where(mask, g, 0.0))

        _emit(out, _backward)
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.data.ndim != 2:
        raise ValueError(f"layer_norm requires a 2-D tensor, got {x.shape}")
    y, mean, rstd = _kernels.layer_norm(x.data, gain.data, bias.data, eps)
    out = Tensor(y)
    if _recording(x, gain, bias):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            gx, ggain, gbias = _kernels.layer_norm_grad(x.data, gain.data, mean, rstd, g)
            _flow_accum(flow, x, gx)
            _flow_accum(flow, gain, ggain)
            _flow_accum(flow, bias, gbias)

        _emit(out, _backward)
    return out


def l2_normalize(v, eps=1e-12):
    """v / max(||v||, eps) for a 1-D vector, with the exact analytic grad."""
    v = as_tensor(v)
    if v.data.ndim != 1:
        raise ValueError(f"l2_normalize requires a 1-D tensor, got {v.shape}")
    norm = max(float(np.linalg.norm(v.data)), eps)
    out = Tensor(v.data / norm)
    if _recording(v):

        def _backward(flow):
            g = _flow_get(flow, out)
            if g is None:
                return
            _flow_accum(flow, v, g / norm - v.data * (np.dot(v.data, g) / norm**3))

        _emit(out, _backward)
    return out


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar-valued f at x, one coordinate
    at a time.  Used as the independent oracle for the tape."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g
