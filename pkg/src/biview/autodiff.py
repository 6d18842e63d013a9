"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the segmentation model and its losses need are
implemented: elementwise arithmetic, log/exp, sigmoid/relu, clipping,
axis reductions, channel concatenation, batch splitting, same-padding
convolution, 2x2 average pooling and 2x nearest-neighbour upsampling.
Everything runs in float64; image-like tensors follow the (N, C, H, W)
layout.  Wrapping a pass in `no_grad()` skips graph recording while
computing bitwise-identical values.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Var",
    "as_var",
    "no_grad",
    "exp",
    "log",
    "sigmoid",
    "relu",
    "clip",
    "concat",
    "split_batch",
    "conv2d",
    "avgpool2",
    "upsample2",
]

# when False, ops still compute values but record no graph; flip it only
# through the no_grad() context manager
_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph recording (inference-only passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Var:
    """A node in the computation graph: a float64 array plus a gradient slot."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __float__(self) -> float:
        return float(self.value)

    def __array__(self, dtype=None, copy=None):
        out = self.value
        if dtype is not None:
            out = out.astype(dtype)
        return out

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None):
        return reduce_sum(self, axis=axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    # -- backprop -----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this (scalar) node into the whole graph."""
        if self.value.ndim != 0:
            raise ValueError("backward() requires a scalar root node")
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value, parents, backward_factory) -> Var:
    """Build a graph node; outside gradient mode, record nothing."""
    if not _GRAD_ENABLED:
        return Var(value)
    out = Var(value, parents=parents)
    out._backward = backward_factory(out)
    return out


def _accumulate(node: Var, grad) -> None:
    if node.grad is None:
        node.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        node.grad = node.grad + grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ops ---------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def factory(out):
        def _bw(g):
            _accumulate(a, _unbroadcast(g, a.value.shape))
            _accumulate(b, _unbroadcast(g, b.value.shape))

        return _bw

    return _node(a.value + b.value, (a, b), factory)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def factory(out):
        def _bw(g):
            _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
            _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

        return _bw

    return _node(a.value * b.value, (a, b), factory)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def factory(out):
        def _bw(g):
            _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
            _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

        return _bw

    return _node(a.value / b.value, (a, b), factory)


def power(a, exponent: float) -> Var:
    a = as_var(a)
    exponent = float(exponent)

    def factory(out):
        def _bw(g):
            _accumulate(a, g * exponent * a.value ** (exponent - 1.0))

        return _bw

    return _node(a.value**exponent, (a,), factory)


def exp(a) -> Var:
    a = as_var(a)
    value = np.exp(a.value)

    def factory(out):
        def _bw(g):
            _accumulate(a, g * value)

        return _bw

    return _node(value, (a,), factory)


def log(a) -> Var:
    a = as_var(a)

    def factory(out):
        def _bw(g):
            _accumulate(a, g / a.value)

        return _bw

    return _node(np.log(a.value), (a,), factory)


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    value = np.empty_like(x)
    pos = x >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    value[~pos] = ex / (1.0 + ex)
    return value


def sigmoid(a) -> Var:
    a = as_var(a)
    value = _sigmoid_array(a.value)

    def factory(out):
        def _bw(g):
            _accumulate(a, g * value * (1.0 - value))

        return _bw

    return _node(value, (a,), factory)


def relu(a) -> Var:
    a = as_var(a)

    def factory(out):
        def _bw(g):
            _accumulate(a, g * (a.value > 0.0))

        return _bw

    return _node(np.maximum(a.value, 0.0), (a,), factory)


def clip(a, lo: float, hi: float) -> Var:
    """Clamp values to [lo, hi]; gradient passes only through unclamped cells."""
    a = as_var(a)

    def factory(out):
        inside = (a.value > lo) & (a.value < hi)

        def _bw(g):
            _accumulate(a, g * inside)

        return _bw

    return _node(np.clip(a.value, lo, hi), (a,), factory)


# -- shape ops ----------------------------------------------------------------


def reshape(a, shape) -> Var:
    a = as_var(a)

    def factory(out):
        def _bw(g):
            _accumulate(a, g.reshape(a.value.shape))

        return _bw

    return _node(a.value.reshape(shape), (a,), factory)


def reduce_sum(a, axis=None) -> Var:
    a = as_var(a)

    def factory(out):
        def _bw(g):
            if axis is None:
                _accumulate(a, np.broadcast_to(g, a.value.shape))
            else:
                axes = (axis,) if isinstance(axis, int) else tuple(axis)
                shape = list(a.value.shape)
                for ax in axes:
                    shape[ax] = 1
                _accumulate(a, np.broadcast_to(g.reshape(shape), a.value.shape))

        return _bw

    return _node(a.value.sum(axis=axis), (a,), factory)


def reduce_mean(a, axis=None) -> Var:
    a = as_var(a)
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.value.shape[ax] for ax in axes]))
    return mul(reduce_sum(a, axis=axis), 1.0 / count)


def concat(parts, axis: int = 1) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def factory(out):
        def _bw(g):
            for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                _accumulate(part, g[tuple(index)])

        return _bw

    return _node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), factory)


def split_batch(a, sizes: tuple[int, ...]) -> list[Var]:
    """Split along the batch axis into chunks of the given sizes."""
    a = as_var(a)
    if sum(sizes) != a.value.shape[0]:
        raise ValueError(f"split sizes {sizes} do not cover batch {a.value.shape[0]}")
    outs = []
    offset = 0
    for size in sizes:
        lo, hi = offset, offset + size

        def factory(out, lo=lo, hi=hi):
            def _bw(g):
                buf = np.zeros_like(a.value)
                buf[lo:hi] = g
                _accumulate(a, buf)

            return _bw

        outs.append(_node(a.value[lo:hi], (a,), factory))
        offset += size
    return outs


# -- spatial ops ---------------------------------------------------------------


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    """Unfold (N, C, H, W) into (N, C*kh*kw, H*W) patches for a same-size conv."""
    n, c, h, w = x.shape
    xp = _pad_spatial(x, pad)
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, kh, kw, h, w), strides=(s0, s1, s2, s3, s2, s3)
    )
    return np.ascontiguousarray(windows).reshape(n, c * kh * kw, h * w)


def _conv2d_raw(x: np.ndarray, weight: np.ndarray, pad: int) -> np.ndarray:
    n, _, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    cols = _im2col(x, kh, kw, pad)
    wmat = weight.reshape(c_out, c_in * kh * kw)
    return np.matmul(wmat, cols).reshape(n, c_out, h, w)


def conv2d(x, weight, bias) -> Var:
    """Stride-1 same-padding convolution of (N, C, H, W) with (Cout, Cin, k, k)."""
    x, weight, bias = as_var(x), as_var(weight), as_var(bias)
    n, c_in, h, w = x.value.shape
    c_out, c_in_w, kh, kw = weight.value.shape
    if c_in != c_in_w:
        raise ValueError(f"conv2d channel mismatch: input {c_in}, kernel {c_in_w}")
    if kh % 2 != 1 or kw % 2 != 1:
        raise ValueError("conv2d requires odd kernel sizes")
    pad = kh // 2
    cols = _im2col(x.value, kh, kw, pad)
    wmat = weight.value.reshape(c_out, c_in * kh * kw)
    value = np.matmul(wmat, cols).reshape(n, c_out, h, w) + bias.value.reshape(1, c_out, 1, 1)

    def factory(out):
        def _bw(g):
            g3 = g.reshape(n, c_out, h * w)
            # dW: sum over the batch of per-sample (Cout, HW) @ (HW, K);
            # the transposed view keeps BLAS from copying the patches
            _accumulate(
                weight, np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.value.shape)
            )
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
            # dX of a stride-1 same conv is the same conv with the kernel
            # rotated 180 degrees and in/out channels swapped.
            w_rot = weight.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            _accumulate(x, _conv2d_raw(g, np.ascontiguousarray(w_rot), pad))

        return _bw

    return _node(value, (x, weight, bias), factory)


def avgpool2(x) -> Var:
    """2x2 average pooling; spatial dims must be even."""
    x = as_var(x)
    n, c, h, w = x.value.shape
    if h % 2 or w % 2:
        raise ValueError("avgpool2 requires even spatial dimensions")
    value = x.value.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def factory(out):
        def _bw(g):
            _accumulate(x, np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25)

        return _bw

    return _node(value, (x,), factory)


def upsample2(x) -> Var:
    """Nearest-neighbour 2x upsampling."""
    x = as_var(x)
    n, c, h, w = x.value.shape
    value = np.repeat(np.repeat(x.value, 2, axis=2), 2, axis=3)

    def factory(out):
        def _bw(g):
            _accumulate(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

        return _bw

    return _node(value, (x,), factory)
