"""Dense tensor algebra with reverse-mode differentiation.

A Tensor wraps a numpy array; differentiable ops executed while a Tape is
active record backward closures on that tape. Tape.backward walks the
recorded nodes in reverse execution order (a valid reverse topological
order, since operands always precede results) and accumulates gradients
into the ``grad`` buffers of leaf tensors that require them. Intermediate
gradients live in scratch storage only, so repeated backward passes are
pure with respect to everything except leaf ``grad`` accumulation.

Set ``KIEGRAPH_DEBUG=1`` to assert that every op output is finite.
"""

import os

import numpy as np

from . import kernels
from .errors import DegenerateInputError, DimensionError, ValidationError

DEBUG_CHECK_FINITE = os.environ.get("KIEGRAPH_DEBUG", "") not in ("", "0")

L2_NORM_EPS = 1e-12

_TAPE_STACK = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=None if _is_float(data) else np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)


def _is_float(data):
    return isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating)


def parameter(data, dtype=None):
    """Wrap an array as a trainable leaf tensor."""
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=True)


class _Node:
    __slots__ = ("out_id", "parents", "backward")

    def __init__(self, out_id, parents, backward):
        self.out_id = out_id
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of differentiable ops; context manager."""

    def __init__(self):
        self._nodes = []
        self._produced = set()

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def _record(self, out, parents, backward):
        self._nodes.append(_Node(id(out), parents, backward))
        self._produced.add(id(out))
        out.requires_grad = True

    def backward(self, loss):
        """Populate grads of requires_grad leaves with d(loss)/d(leaf)."""
        if not isinstance(loss, Tensor):
            raise ValidationError("backward expects a Tensor")
        if loss.data.size != 1:
            raise ValidationError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        scratch = {id(loss): np.ones_like(loss.data)}
        if id(loss) not in self._produced:
            self._leaf_accumulate(loss, scratch[id(loss)])
            return
        for node in reversed(self._nodes):
            g = scratch.pop(node.out_id, None)
            if g is None:
                continue
            contribs = node.backward(g)
            for parent, gp in zip(node.parents, contribs):
                if gp is None:
                    continue
                if id(parent) in self._produced:
                    acc = scratch.get(id(parent))
                    scratch[id(parent)] = gp if acc is None else acc + gp
                elif parent.requires_grad:
                    self._leaf_accumulate(parent, gp)

    @staticmethod
    def _leaf_accumulate(leaf, g):
        if leaf.grad is None:
            leaf.grad = g.astype(leaf.data.dtype, copy=True)
        else:
            leaf.grad = leaf.grad + g


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _coerce_pair(a, b):
    """Coerce operands, casting non-Tensor values to the Tensor's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return _as_tensor(a), _as_tensor(b)


def _result(data, parents, backward_builder):
    """Create an op result, recording it when a tape is active and needed."""
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(data)):
        raise ArithmeticError("non-finite value produced by a forward op")
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        needs = tuple(p.requires_grad for p in parents)
        tape._record(out, parents, backward_builder(needs))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_data(a, b, opname):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(
            f"{opname}: incompatible shapes {a.data.shape} and {b.data.shape}"
        ) from None
    return a.data, b.data


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = _coerce_pair(a, b)
    da, db = _binary_data(a, b, "add")

    def build(needs):
        def bwd(g):
            return (
                _unbroadcast(g, da.shape) if needs[0] else None,
                _unbroadcast(g, db.shape) if needs[1] else None,
            )

        return bwd

    return _result(da + db, (a, b), build)


def sub(a, b):
    a, b = _coerce_pair(a, b)
    da, db = _binary_data(a, b, "sub")

    def build(needs):
        def bwd(g):
            return (
                _unbroadcast(g, da.shape) if needs[0] else None,
                _unbroadcast(-g, db.shape) if needs[1] else None,
            )

        return bwd

    return _result(da - db, (a, b), build)


def mul(a, b):
    a, b = _coerce_pair(a, b)
    da, db = _binary_data(a, b, "mul")

    def build(needs):
        def bwd(g):
            return (
                _unbroadcast(g * db, da.shape) if needs[0] else None,
                _unbroadcast(g * da, db.shape) if needs[1] else None,
            )

        return bwd

    return _result(da * db, (a, b), build)


def relu(x):
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)

    def build(needs):
        pos = x.data > 0
        return lambda g: (g * pos,)

    return _result(out, (x,), build)


def sigmoid(x):
    x = _as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def build(needs):
        return lambda g: (g * out * (1.0 - out),)

    return _result(out, (x,), build)


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def build(needs):
        return lambda g: (g * (1.0 - out * out),)

    return _result(out, (x,), build)


def exp(x):
    x = _as_tensor(x)
    out = np.exp(x.data)

    def build(needs):
        return lambda g: (g * out,)

    return _result(out, (x,), build)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    da, db = a.data, b.data
    if da.ndim not in (1, 2) or db.ndim not in (1, 2):
        raise DimensionError(
            f"matmul supports 1-D/2-D operands, got {da.shape} and {db.shape}"
        )
    if da.shape[-1] != db.shape[0]:
        raise DimensionError(
            f"matmul: inner extents differ, {da.shape} vs {db.shape}"
        )
    a2 = da.reshape(1, -1) if da.ndim == 1 else da
    b2 = db.reshape(-1, 1) if db.ndim == 1 else db
    out2 = a2 @ b2
    out = out2
    if da.ndim == 1:
        out = out[0]
    if db.ndim == 1:
        out = out[..., 0]

    def build(needs):
        def bwd(g):
            g2 = g.reshape(a2.shape[0], b2.shape[1])
            ga = (g2 @ b2.T).reshape(da.shape) if needs[0] else None
            gb = (a2.T @ g2).reshape(db.shape) if needs[1] else None
            return ga, gb

        return bwd

    return _result(out, (a, b), build)


def transpose(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {x.data.shape}")

    def build(needs):
        return lambda g: (g.T,)

    return _result(x.data.T.copy(), (x,), build)


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.data.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} to {shape}") from None

    def build(needs):
        return lambda g: (g.reshape(old),)

    return _result(out, (x,), build)


def getitem(x, idx):
    x = _as_tensor(x)
    out = x.data[idx]

    def build(needs):
        def bwd(g):
            gx = np.zeros_like(x.data)
            gx[idx] += g
            return (gx,)

        return bwd

    return _result(out, (x,), build)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def build(needs):
        def bwd(g):
            pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
            return tuple(
                p if need else None for p, need in zip(pieces, needs)
            )

        return bwd

    return _result(out, tuple(tensors), build)


def repeat_rows(x, k):
    """(n,D) -> (n*k,D): each row repeated k times consecutively."""
    x = _as_tensor(x)
    n, d = x.data.shape
    out = np.repeat(x.data, k, axis=0)

    def build(needs):
        return lambda g: (g.reshape(n, k, d).sum(axis=1),)

    return _result(out, (x,), build)


def tile_rows(x, k):
    """(n,D) -> (k*n,D): the whole block stacked k times."""
    x = _as_tensor(x)
    n, d = x.data.shape
    out = np.tile(x.data, (k, 1))

    def build(needs):
        return lambda g: (g.reshape(k, n, d).sum(axis=0),)

    return _result(out, (x,), build)


def tensor_sum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def build(needs):
        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, x.data.shape).copy(),)
            gk = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gk, x.data.shape).copy(),)

        return bwd

    return _result(out, (x,), build)


def tensor_mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# normalizations


def softmax(x, mask=None):
    """Softmax over the last axis with optional boolean keep-mask.

    Masked entries are exactly zero in the output; the max of the kept
    entries is subtracted before exponentiation for stability.
    """
    x = _as_tensor(x)
    d = x.data
    if d.size == 0:
        raise DegenerateInputError("softmax of an empty tensor")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != d.shape:
            raise DimensionError(
                f"softmax mask shape {mask.shape} != input shape {d.shape}"
            )
        if not mask.any(axis=-1).all():
            raise DegenerateInputError("softmax row with all entries masked")
        shifted = np.where(mask, d, -np.inf)
        m = shifted.max(axis=-1, keepdims=True)
        e = np.exp(np.where(mask, d - m, -np.inf))
        e = np.where(mask, e, 0.0)
    else:
        m = d.max(axis=-1, keepdims=True)
        e = np.exp(d - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def build(needs):
        def bwd(g):
            s = (out * g).sum(axis=-1, keepdims=True)
            return (out * (g - s),)

        return bwd

    return _result(out, (x,), build)


def l2_normalize(x):
    """Scale along the last axis to unit norm; rows with norm < eps pass through."""
    x = _as_tensor(x)
    d = x.data
    norm = np.sqrt((d * d).sum(axis=-1, keepdims=True))
    small = norm < L2_NORM_EPS
    safe = np.where(small, 1.0, norm)
    out = np.where(small, d, d / safe)

    def build(needs):
        def bwd(g):
            dot = (d * g).sum(axis=-1, keepdims=True)
            gx = g / safe - d * (dot / (safe * safe * safe))
            return (np.where(small, g, gx),)

        return bwd

    return _result(out, (x,), build)


# ---------------------------------------------------------------------------
# spatial ops (kernel-backed)


def conv2d(x, w, stride=1, padding=0):
    """Correlation of (C,H,W) input with (K,C,kh,kw) kernels -> (K,H',W')."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects (C,H,W) and (K,C,kh,kw), got {x.data.shape} and {w.data.shape}"
        )
    c, h, wd = x.data.shape
    k_out, c_w, kh, kw = w.data.shape
    if c != c_w:
        raise DimensionError(f"conv2d channel mismatch: input {c}, kernels {c_w}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d kernel ({kh},{kw}) larger than padded input ({hp},{wp})"
        )
    xpad = (
        np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
        if padding
        else x.data
    )
    out = kernels.conv2d_forward(xpad, w.data, stride)

    def build(needs):
        def bwd(g):
            g = np.ascontiguousarray(g)
            gw = kernels.conv2d_grad_w(xpad, g, kh, kw, stride) if needs[1] else None
            gx = None
            if needs[0]:
                gxp = kernels.conv2d_grad_x(g, w.data, stride, hp, wp)
                gx = (
                    gxp[:, padding : padding + h, padding : padding + wd]
                    if padding
                    else gxp
                )
            return gx, gw

        return bwd

    return _result(out, (x, w), build)


def maxpool2x(x):
    """2x2 max pooling; both spatial extents must be even."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"maxpool2x expects (C,H,W), got {x.data.shape}")
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x requires even extents, got {(h, w)}")
    out, idx = kernels.maxpool2x_forward(x.data)

    def build(needs):
        return lambda g: (kernels.maxpool2x_backward(np.ascontiguousarray(g), idx),)

    return _result(out, (x,), build)


def upsample_nearest2x(x):
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"upsample_nearest2x expects (C,H,W), got {x.data.shape}")
    out = kernels.upsample2x_forward(x.data)

    def build(needs):
        return lambda g: (kernels.upsample2x_backward(g),)

    return _result(out, (x,), build)


def _roi_bin_edges(lo, hi, grid):
    """Integer bin edges over [lo,hi); empty bins clamped to one pixel."""
    extent = hi - lo
    starts = np.empty(grid, dtype=np.int64)
    ends = np.empty(grid, dtype=np.int64)
    for k in range(grid):
        s = lo + (k * extent) // grid
        e = lo + ((k + 1) * extent) // grid
        if e <= s:
            s = min(s, hi - 1)
            e = s + 1
        starts[k] = s
        ends[k] = e
    return starts, ends


def roi_max_pool(fmap, rect, grid):
    """Per-bin channel-wise max over an integer rectangle of (C,H,W).

    rect is (y0, y1, x0, x1) with y1 > y0, x1 > x0, all within the map.
    """
    fmap = _as_tensor(fmap)
    if fmap.data.ndim != 3:
        raise DimensionError(f"roi_max_pool expects (C,H,W), got {fmap.data.shape}")
    c, h, w = fmap.data.shape
    y0, y1, x0, x1 = rect
    if not (0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w):
        raise ValidationError(
            f"region {rect} outside feature map of size {(h, w)}"
        )
    ys, ye = _roi_bin_edges(y0, y1, grid)
    xs, xe = _roi_bin_edges(x0, x1, grid)
    out, arg = kernels.roi_max_forward(fmap.data, ys, ye, xs, xe)

    def build(needs):
        return lambda g: (
            kernels.roi_max_backward(np.ascontiguousarray(g), arg, c, h, w),
        )

    return _result(out, (fmap,), build)


# ---------------------------------------------------------------------------
# recurrent cell and loss


def lstm_cell(x, h, c, w_x, w_h, b):
    """One LSTM step; x is (B,Din) or (Din,), h/c are (B,Dh) or (Dh,).

    Gate packing along the 4*Dh axis is input, forget, candidate, output.
    Built from primitive ops, so it differentiates through time for free.
    """
    x, h, c = _as_tensor(x), _as_tensor(h), _as_tensor(c)
    dh = h.data.shape[-1]
    if w_x.data.shape != (4 * dh, x.data.shape[-1]) or w_h.data.shape != (4 * dh, dh):
        raise DimensionError(
            f"lstm_cell parameter shapes {w_x.data.shape}/{w_h.data.shape} do not "
            f"match input {x.data.shape} and state {h.data.shape}"
        )
    gates = add(add(matmul(x, w_x.T), matmul(h, w_h.T)), b)
    sl = (slice(None), ) if gates.data.ndim == 2 else ()
    i = sigmoid(gates[sl + (slice(0, dh),)])
    f = sigmoid(gates[sl + (slice(dh, 2 * dh),)])
    g = tanh(gates[sl + (slice(2 * dh, 3 * dh),)])
    o = sigmoid(gates[sl + (slice(3 * dh, 4 * dh),)])
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    return h2, c2


def cross_entropy(logits, labels):
    """Mean over rows of -log softmax(logits)[label]."""
    logits = _as_tensor(logits)
    d = logits.data
    if d.ndim != 2:
        raise DimensionError(f"cross_entropy expects (n,classes), got {d.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = d.shape
    if labels.shape != (n,):
        raise ValidationError(
            f"cross_entropy: {n} logit rows but labels shape {labels.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValidationError(
            f"cross_entropy: label outside [0,{k}): {labels[(labels < 0) | (labels >= k)][0]}"
        )
    m = d.max(axis=1, keepdims=True)
    z = d - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    out = np.asarray(-logp[np.arange(n), labels].mean())

    def build(needs):
        def bwd(g):
            p = np.exp(logp)
            p[np.arange(n), labels] -= 1.0
            return (p * (g / n),)

        return bwd

    return _result(out, (logits,), build)


def linear(x, w, b=None):
    """x @ w.T (+ b). w is (out,in) as stored in parameter structs."""
    out = matmul(x, transpose(w))
    if b is not None:
        out = add(out, b)
    return out
