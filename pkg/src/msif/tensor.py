"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable op builds its output with :func:`_result`, which attaches a
:class:`Node` holding the inputs and a backward rule. :meth:`Tensor.backward`
collects the nodes reachable from a scalar loss into a :class:`Tape` (a
topologically ordered list) and replays it in reverse once.

Broadcasting follows numpy's trailing-dimension alignment; incompatible shapes
raise :class:`ShapeError` naming both shapes. Convolutions use the
cross-correlation convention (kernels are not flipped).
"""
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from msif import kernels


class ShapeError(ValueError):
    pass


class NonScalarLossError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    """One recorded operation: its inputs and how to push gradients to them."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, op, inputs, backward):
    req = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad = req
    out.grad = None
    out.name = None
    out._node = Node(op, inputs, backward) if req else None
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(tuple(a), tuple(b))
    except ValueError:
        raise ShapeError(f"shapes {tuple(a)} and {tuple(b)} are not broadcast-compatible") from None


# -- the backward pass -------------------------------------------------

class Tape:
    """Operations reachable from ``root`` in topological order.

    ``entries`` holds output tensors; each entry's inputs appear earlier.
    """

    def __init__(self, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if t._node is None:
                continue
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t._node.inputs:
                if inp._node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        self.entries = order

    def __len__(self):
        return len(self.entries)

    def run(self, root, seed):
        grads = {id(root): seed}
        visits = 0
        for out in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            visits += 1
            in_grads = out._node.backward(g)
            for inp, ig in zip(out._node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
                else:
                    prev = grads.get(id(inp))
                    grads[id(inp)] = ig if prev is None else prev + ig
        return visits


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from a scalar ``loss``.

    Gradients accumulate into existing ``.grad`` buffers.
    """
    if loss.data.size != 1:
        raise NonScalarLossError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape(loss)
    tape = Tape(loss)
    seed = np.ones_like(loss.data)
    if loss._node is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return tape
    tape.run(loss, seed)
    return tape


def check_finite(*tensors, what="tensor"):
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise NonFiniteError(f"non-finite values in {what} {t.name or ''} shape={t.shape}")
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NonFiniteError(f"non-finite gradient in {what} {t.name or ''} shape={t.shape}")


# -- elementwise -------------------------------------------------------

def elementwise(kind, a, b):
    """Binary ``add``/``sub``/``mul``/``div`` with trailing-dimension broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    x, y = a.data, b.data
    sa, sb = a.shape, b.shape
    if kind == "add":
        data = x + y

        def bw(g):
            return _unbroadcast(g, sa), _unbroadcast(g, sb)
    elif kind == "sub":
        data = x - y

        def bw(g):
            return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    elif kind == "mul":
        data = x * y

        def bw(g):
            return _unbroadcast(g * y, sa), _unbroadcast(g * x, sb)
    elif kind == "div":
        with np.errstate(divide="ignore", invalid="ignore"):
            data = x / y

        def bw(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                return _unbroadcast(g / y, sa), _unbroadcast(-g * x / (y * y), sb)
    else:
        raise ValueError(f"unknown elementwise op {kind!r}")
    return _result(data, kind, (a, b), bw)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def div(a, b):
    return elementwise("div", a, b)


def neg(a):
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def power(a, p):
    p = float(p)
    x = a.data
    return _result(x ** p, "pow", (a,), lambda g: (g * p * x ** (p - 1.0),))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _result(y, "exp", (a,), lambda g: (g * y,))


def log(a):
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    return _result(y, "log", (a,), lambda g: (g / x,))


def sqrt(a):
    y = np.sqrt(a.data)
    return _result(y, "sqrt", (a,), lambda g: (0.5 * g / y,))


def activation(kind, x, alpha=None):
    """Elementwise nonlinearity: ``sigmoid``, ``tanh``, ``relu`` or ``prelu``.

    ``prelu`` takes a learnable scalar ``alpha`` tensor (or a float).
    """
    x = as_tensor(x)
    v = x.data
    if kind == "sigmoid":
        y = expit(v)
        return _result(y, kind, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "tanh":
        y = np.tanh(v)
        return _result(y, kind, (x,), lambda g: (g * (1.0 - y * y),))
    if kind == "relu":
        pos = v > 0
        return _result(np.where(pos, v, 0.0), kind, (x,), lambda g: (g * pos,))
    if kind == "prelu":
        a = as_tensor(0.25 if alpha is None else alpha)
        pos = v > 0
        av = a.data
        y = np.where(pos, v, av * v)

        def bw(g):
            ga = _unbroadcast(np.where(pos, 0.0, g * v), a.shape)
            return np.where(pos, g, g * av), ga
        return _result(y, kind, (x, a), bw)
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(x):
    return activation("sigmoid", x)


def tanh(x):
    return activation("tanh", x)


def relu(x):
    return activation("relu", x)


def prelu(x, alpha):
    return activation("prelu", x, alpha)


# -- reductions and shape ops -----------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims=False):
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)
    return _result(y, "sum", (a,), bw)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / n)


def reshape(a, shape):
    old = a.shape
    y = a.data.reshape(shape)
    return _result(y, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    y = np.ascontiguousarray(a.data.transpose(axes))
    return _result(y, "transpose", (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx):
    shape = a.shape
    y = np.array(a.data[idx], dtype=np.float64)

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)
    return _result(y, "getitem", (a,), bw)


def take(a, indices, axis=0):
    """Gather slices of ``a`` along ``axis``; repeated indices accumulate grads."""
    indices = np.asarray(indices, dtype=np.intp)
    shape = a.shape
    y = np.take(a.data, indices, axis=axis)

    def bw(g):
        out = np.zeros(shape)
        gm = np.moveaxis(g, axis, 0)
        om = np.moveaxis(out, axis, 0)
        np.add.at(om, indices, gm)
        return (out,)
    return _result(y, "take", (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != axis):
            raise ShapeError(f"cannot concatenate shapes {tensors[0].shape} and {t.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    y = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))
    return _result(y, "concat", tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                for t in tensors]
    return concat(expanded, axis=axis)


def softmax(a, axis=-1):
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _result(y, "softmax", (a,), bw)


# -- linear algebra ----------------------------------------------------

def matmul(a, b):
    """Matrix product; leading (batch) dimensions broadcast like numpy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2])
    x, w = a.data, b.data
    y = x @ w
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = g @ np.swapaxes(w, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, sa), _unbroadcast(gb, sb)
    return _result(y, "matmul", (a, b), bw)


def conv2d(inp, kernels_, stride=1, padding=0, bias=None):
    """2-D cross-correlation with zero padding.

    ``inp`` is (C_in, H, W) or batched (B, C_in, H, W); ``kernels_`` is
    (C_out, C_in, kh, kw). Output extent is floor((H + 2p - kh) / stride) + 1.
    """
    inp, kernels_ = as_tensor(inp), as_tensor(kernels_)
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    batched = inp.ndim == 4
    x = inp.data if batched else inp.data[None]
    if x.ndim != 4 or kernels_.ndim != 4:
        raise ShapeError(f"conv2d expects (B,)C,H,W input and 4-D kernels, got {inp.shape}, {kernels_.shape}")
    B, C, H, W = x.shape
    Co, Ci, kh, kw = kernels_.shape
    if Ci != C:
        raise ShapeError(f"conv2d channel mismatch: input {inp.shape} vs kernels {kernels_.shape}")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {H + 2 * padding}x{W + 2 * padding}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    cols = kernels.im2col(x, kh, kw, stride, padding)
    wmat = kernels_.data.reshape(Co, -1)
    y = np.matmul(wmat, cols).reshape(B, Co, Ho, Wo)
    if not batched:
        y = y[0]

    def bw(g):
        g = g.reshape(B, Co, Ho * Wo)
        gw = np.einsum("bol,bkl->ok", g, cols).reshape(kernels_.shape)
        gcols = np.matmul(wmat.T, g)
        gx = kernels.col2im(gcols, (B, C, H, W), kh, kw, stride, padding)
        return (gx if batched else gx[0]), gw
    out = _result(y, "conv2d", (inp, kernels_), bw)
    if bias is not None:
        shape = (Co, 1, 1)
        out = out + reshape(as_tensor(bias), shape)
    return out
