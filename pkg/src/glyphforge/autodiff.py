"""Reverse-mode automatic differentiation over numpy arrays.

Every operation builds a node that remembers its parents and enough state to
push gradients backward; ``Tensor.backward()`` topologically sorts the graph
from the loss and accumulates gradients into every reachable node. The op set
is exactly what the recognizer needs: dense algebra, 2-D convolution and max
pooling, and a numerically stable log-softmax. All math is float64.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeMismatchError(ValueError):
    """Operand shapes incompatible with the operation."""


class NoRecordedGraphError(RuntimeError):
    """backward() called on a tensor with no recorded computation."""


class DoubleBackwardError(RuntimeError):
    """backward() called twice on the same recorded graph."""


_grad_enabled = True


class no_grad:
    """Context manager: skip graph recording (evaluation passes)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """An n-d float64 array with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "ctx", "_backward_done")

    def __init__(self, data, ctx: "Function | None" = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.ctx = ctx
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- graph construction ------------------------------------------------

    def __add__(self, other):
        return Add.apply(self, _ensure(other))

    __radd__ = __add__

    def __neg__(self):
        return Neg.apply(self)

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(_ensure(other)))

    def __mul__(self, other):
        return Mul.apply(self, _ensure(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return MatMul.apply(self, _ensure(other))

    def __getitem__(self, idx):
        if not isinstance(idx, (int, np.integer)):
            raise TypeError("only integer indexing along axis 0 is recorded")
        return Index0.apply(self, int(idx))

    def sigmoid(self):
        return Sigmoid.apply(self)

    def tanh(self):
        return Tanh.apply(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axis, keepdims)

    # -- gradients -----------------------------------------------------------

    def backward(self):
        """Populate .grad on every node reachable from this scalar."""
        if self.ctx is None:
            raise NoRecordedGraphError("tensor has no recorded computation graph")
        if self._backward_done:
            raise DoubleBackwardError("backward already ran on this graph; rebuild it first")
        if self.data.size != 1:
            raise ShapeMismatchError("backward requires a scalar loss")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node.ctx is not None:
                for parent in node.ctx.parents:
                    if id(parent) not in seen:
                        stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            ctx = node.ctx
            if ctx is None or node.grad is None:
                continue
            into = getattr(ctx, "backward_into", None)
            if into is not None:
                into(node.grad)
                continue
            for parent, g in zip(ctx.parents, ctx.backward(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    # Own a fresh array: ops may hand back views or the
                    # upstream gradient itself.
                    if g is node.grad or g.base is not None or not g.flags.writeable:
                        g = np.array(g, dtype=DTYPE)
                    parent.grad = g
                else:
                    parent.grad += g
        self._backward_done = True


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Function:
    """One recorded operation: holds parent tensors plus saved state."""

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *args, **kwargs):
        ctx = cls(*[a for a in args if isinstance(a, Tensor)])
        raw = [a.data if isinstance(a, Tensor) else a for a in args]
        out = ctx.forward(*raw, **kwargs)
        return Tensor(out, ctx=ctx if _grad_enabled else None)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, out_grad: np.ndarray):
        raise NotImplementedError


class Add(Function):
    def forward(self, a, b):
        self.sa, self.sb = a.shape, b.shape
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.sa), _unbroadcast(g, self.sb)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class MatMul(Function):
    """2-D matrix product, optionally with the second operand transposed."""

    def forward(self, a, b, transpose_b=False):
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeMismatchError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
        k = b.shape[1] if transpose_b else b.shape[0]
        if a.shape[1] != k:
            raise ShapeMismatchError(f"inner dimensions differ: {a.shape} @ {b.shape}")
        self.a, self.b, self.tb = a, b, transpose_b
        return a @ (b.T if transpose_b else b)

    def backward(self, g):
        if self.tb:
            return g @ self.b, g.T @ self.a
        return g @ self.b.T, self.a.T @ g


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    return MatMul.apply(a, b, transpose_b=transpose_b)


class Sigmoid(Function):
    def forward(self, a):
        # tanh form is overflow-safe for any argument
        self.out = 0.5 * (1.0 + np.tanh(0.5 * a))
        return self.out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, g):
        return (g * (1.0 - self.out * self.out),)


class Reshape(Function):
    def forward(self, a, shape):
        self.old = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.old),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = axes
        return a.transpose(axes)

    def backward(self, g):
        inv = np.argsort(self.axes)
        return (g.transpose(inv),)


class Concat(Function):
    """Concatenate two tensors along an axis."""

    def forward(self, a, b, axis=0):
        self.axis = axis
        self.split = a.shape[axis]
        return np.concatenate([a, b], axis=axis)

    def backward(self, g):
        return np.split(g, [self.split], axis=self.axis)


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    return Concat.apply(a, b, axis=axis)


class Index0(Function):
    """Take one slice along axis 0; gradient scatters into the parent."""

    def forward(self, a, idx):
        self.idx = idx
        return a[idx]

    def backward_into(self, g):
        parent = self.parents[0]
        if parent.grad is None:
            parent.grad = np.zeros_like(parent.data)
        parent.grad[self.idx] += g


class Stack0(Function):
    """Stack equal-shape tensors along a new leading axis."""

    def forward(self, *arrays):
        return np.stack(arrays, axis=0)

    def backward_into(self, g):
        for t, parent in enumerate(self.parents):
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g[t]


def stack0(tensors: list[Tensor]) -> Tensor:
    return Stack0.apply(*tensors)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, self.shape),)


class Mean(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        self.count = a.size if axis is None else np.prod(
            [a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return np.mean(a, axis=axis, keepdims=keepdims)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, self.shape) / self.count,)


class LogSoftmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        m = a.max(axis=axis, keepdims=True)
        z = a - m
        self.out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
        return self.out

    def backward(self, g):
        return (g - np.exp(self.out) * g.sum(axis=self.axis, keepdims=True),)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


class Conv2d(Function):
    """Cross-correlation of (N, C_in, H, W) with (C_out, C_in, kH, kW) + bias."""

    def forward(self, x, kernel, bias, stride=1, padding=0):
        n, c_in, h, w = x.shape
        c_out, c_in2, kh, kw = kernel.shape
        if c_in != c_in2:
            raise ShapeMismatchError(f"input has {c_in} channels, kernel expects {c_in2}")
        if bias.shape != (c_out,):
            raise ShapeMismatchError(f"bias shape {bias.shape} != ({c_out},)")
        if kh > h + 2 * padding or kw > w + 2 * padding:
            raise ShapeMismatchError("kernel larger than padded input")
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        oh = (h + 2 * padding - kh) // stride + 1
        ow = (w + 2 * padding - kw) // stride + 1
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c_in * kh * kw)
        w2 = kernel.reshape(c_out, -1)
        out = cols @ w2.T + bias
        self.cols, self.kernel = cols, kernel
        self.x_shape, self.stride, self.padding = x.shape, stride, padding
        self.dims = (n, oh, ow, c_out, kh, kw)
        return out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)

    def backward(self, g):
        n, oh, ow, c_out, kh, kw = self.dims
        _, c_in, h, w = self.x_shape
        s, p = self.stride, self.padding
        gm = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        db = gm.sum(axis=0)
        dk = (gm.T @ self.cols).reshape(self.kernel.shape)
        dcols = gm @ self.kernel.reshape(c_out, -1)
        d6 = dcols.reshape(n, oh, ow, c_in, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros((n, c_in, h + 2 * p, w + 2 * p))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += d6[:, :, i, j]
        dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
        return dx, dk, db


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding)


class MaxPool2d(Function):
    """Per-window maximum; gradient routes to the first (row-major) argmax."""

    def forward(self, x, window, stride=None):
        stride = stride or window
        n, c, h, w = x.shape
        wh, ww = window
        sh, sw = stride
        if wh > h or ww > w:
            raise ShapeMismatchError(f"pool window {window} exceeds input {(h, w)}")
        oh = (h - wh) // sh + 1
        ow = (w - ww) // sw + 1
        win = sliding_window_view(x, (wh, ww), axis=(2, 3))[:, :, ::sh, ::sw]
        flat = win.reshape(n, c, oh, ow, wh * ww)
        self.idx = flat.argmax(axis=-1)
        self.x_shape, self.window, self.stride = x.shape, window, stride
        return np.take_along_axis(flat, self.idx[..., None], axis=-1)[..., 0]

    def backward(self, g):
        n, c, h, w = self.x_shape
        wh, ww = self.window
        sh, sw = self.stride
        oh, ow = self.idx.shape[2], self.idx.shape[3]
        iy = self.idx // ww
        ix = self.idx % ww
        ni, ci, ohi, owi = np.indices((n, c, oh, ow), sparse=True)
        dx = np.zeros(self.x_shape)
        if (wh, ww) == (sh, sw):
            # Non-overlapping windows never collide: plain fancy assignment.
            dx[ni, ci, ohi * sh + iy, owi * sw + ix] = g
        else:
            np.add.at(dx, (ni, ci, ohi * sh + iy, owi * sw + ix), g)
        return (dx,)


def maxpool2d(x: Tensor, window: tuple[int, int], stride: tuple[int, int] | None = None) -> Tensor:
    return MaxPool2d.apply(x, window, stride=stride)
