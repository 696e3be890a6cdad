"""Dense float32 tensors with reverse-mode automatic differentiation.

Stored values (`data`, what checkpoints and traces see) are row-major
32-bit floats. Arithmetic chains through a 64-bit shadow (`fdata`) so that
reductions, matrix products, and gradient verification are not limited by
intermediate rounding; the shadow is always the unrounded value whose
float32 rounding is `data`. Gradients are kept in 64 bits.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


class Tensor:
    """A dense float32 array plus a float64 shadow and gradient buffer.

    Leaf tensors (parameters, inputs) derive the shadow from `data` on
    demand, so in-place `data` updates stay consistent; op results carry
    their unrounded value.
    """

    __slots__ = ("data", "_fdata", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _contiguous(data, np.float32)
        self._fdata = None
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def fdata(self) -> np.ndarray:
        if self._fdata is None:
            return self.data.astype(np.float64)
        return self._fdata

    @fdata.setter
    def fdata(self, value):
        self._fdata = value

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", f"tensor has {self.data.size} elements")
        return float(self.fdata.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _contiguous(data, dtype) -> np.ndarray:
    """C-contiguous cast that, unlike ascontiguousarray, keeps 0-d shapes."""
    arr = np.asarray(data, dtype=dtype)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        # own the buffer: g may alias another node's gradient
        t.grad = np.array(np.broadcast_to(g, t.data.shape), dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(out64: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor(out64)
    out.fdata = _contiguous(out64, np.float64)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(root: Tensor):
    """Reverse-mode sweep from a scalar root, visiting each node once."""
    if root.data.size != 1:
        raise ShapeError("backward", "root must be a scalar")
    if not root.requires_grad:
        return
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    root.grad = np.ones(root.data.shape, dtype=np.float64)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.fdata + b.fdata
    except ValueError:
        raise ShapeError("add", f"cannot broadcast {a.shape} with {b.shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), back)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def back(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _make(-a.fdata, (a,), back)


def sub(a, b) -> Tensor:
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.fdata * b.fdata
    except ValueError:
        raise ShapeError("mul", f"cannot broadcast {a.shape} with {b.shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.fdata, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.fdata, b.shape))

    return _make(out, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul", f"expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.fdata @ b.fdata

    def back(g):
        if a.requires_grad:
            _accumulate(a, g @ b.fdata.T)
        if b.requires_grad:
            _accumulate(b, a.fdata.T @ g)

    return _make(out, (a, b), back)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", f"expected 2-D operand, got {a.shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, g.T)

    return _make(a.fdata.T, (a,), back)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.fdata.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {a.shape} to {shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _make(out, (a,), back)


def flatten(a) -> Tensor:
    return reshape(a, (-1,))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", "no tensors given")
    try:
        out = np.concatenate([t.fdata for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", f"incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]

    def back(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + n)
                _accumulate(t, g[tuple(index)])
            offset += n

    return _make(out, tensors, back)


def getitem(a, key) -> Tensor:
    a = _as_tensor(a)
    out = a.fdata[key]
    sliced_shape = np.shape(out)

    def back(g):
        if a.requires_grad:
            buf = np.zeros(a.shape, dtype=np.float64)
            buf[key] += np.reshape(g, sliced_shape)
            _accumulate(a, buf)

    return _make(out, (a,), back)


def take_rows(table, ids) -> Tensor:
    """Row lookup table[ids]; the backward pass scatter-adds into the table."""
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeError("take_rows", f"expected 2-D table, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take_rows", "ids must be a 1-D sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("take_rows", "id out of range")
    out = table.fdata[idx]

    def back(g):
        if table.requires_grad:
            buf = np.zeros(table.shape, dtype=np.float64)
            np.add.at(buf, idx, g)
            _accumulate(table, buf)

    return _make(out, (table,), back)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.fdata.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).astype(np.float64))
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g_exp, a.shape).astype(np.float64))

    return _make(np.asarray(out), (a,), back)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def mse(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("mse", f"shapes differ: {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return tmean(mul(diff, diff))


# ---------------------------------------------------------------------------
# nonlinearities


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.fdata - a.fdata.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            _accumulate(a, s * (g - inner))

    return _make(s, (a,), back)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    a = _as_tensor(a)
    x = a.fdata
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * inv

    def back(g):
        if a.requires_grad:
            g_mean = g.mean(axis=-1, keepdims=True)
            gy_mean = (g * y).mean(axis=-1, keepdims=True)
            _accumulate(a, inv * (g - g_mean - y * gy_mean))

    return _make(y, (a,), back)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = _as_tensor(a)
    x = a.fdata
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)

    def back(g):
        if a.requires_grad:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
            dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du
            _accumulate(a, g * dy)

    return _make(y, (a,), back)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.fdata
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), back)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.fdata)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - y**2))

    return _make(y, (a,), back)


def attention(q, k, v, scale: float | None = None) -> Tensor:
    """Scaled dot-product attention softmax(q kᵀ / sqrt(d)) v for 2-D inputs."""
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention", "q, k, v must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise ShapeError("attention", f"q/k widths differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError("attention", f"k/v row counts differ: {k.shape} vs {v.shape}")
    if scale is None:
        scale = 1.0 / np.sqrt(k.shape[1])
    logits = mul(matmul(q, transpose(k)), scale)
    return matmul(softmax(logits, axis=-1), v)


# ---------------------------------------------------------------------------
# verification helpers


def assert_finite(name: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")


def grad_check(f, point: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The relative error denominator is max(|analytic|, |numeric|, 1e-8) per
    coordinate; the central difference uses the perturbation actually
    representable in float32.
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    probe = Tensor(point.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ShapeError("grad_check", "f must return a scalar")
    backward(out)
    analytic = (probe.grad if probe.grad is not None
                else np.zeros(probe.shape, dtype=np.float64)).reshape(-1)

    base = point.data.astype(np.float32).copy()
    flat = base.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = np.float32(np.float64(keep) + eps)
        hi = np.float64(flat[i])
        f_hi = float(f(Tensor(base)).fdata.reshape(()))
        flat[i] = np.float32(np.float64(keep) - eps)
        lo = np.float64(flat[i])
        f_lo = float(f(Tensor(base)).fdata.reshape(()))
        flat[i] = keep
        numeric = (f_hi - f_lo) / (hi - lo)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
