"""Dense N-d tensors with reverse-mode automatic differentiation.

The graph is implicit: every operation returns a new ``Tensor`` holding a
backward closure and references to the parents that need gradients.
``Tensor.backward()`` topologically orders that DAG, pushes the seed
gradient through each closure exactly once, and then releases the graph
(a second ``backward`` on the same graph raises).

Gradients of leaf tensors accumulate (sum) across consumers and across
calls until ``zero_grad``. Intermediate gradients are freed as soon as
they have been propagated, which keeps peak memory close to the size of
the saved activations.

Training and inference run in float32; building the same graph from
float64 leaves runs everything in float64, which is what the finite
difference checks use.
"""
from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from . import backend

_FLOAT_DTYPES = (np.float32, np.float64)

# When enabled, every op output is scanned for NaN/Inf. Costs one pass per
# op; tests switch it on, training leaves it off and relies on the loss and
# gradient checks in the optimizer.
FINITE_CHECKS = os.environ.get("COMBONET_CHECK_FINITE", "") not in ("", "0")

_grad_enabled = True


def set_finite_checks(enabled: bool) -> None:
    global FINITE_CHECKS
    FINITE_CHECKS = bool(enabled)


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if FINITE_CHECKS and not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values produced by op '{op}'")


class Tensor:
    """N-dimensional array node of the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bw",
                 "_grad_owned", "_released", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._bw = None
        self._grad_owned = False
        self._released = False
        self.op = "leaf"

    # -- construction used by ops ------------------------------------------
    @classmethod
    def _from_op(cls, data, parents, op: str):
        _check_finite(data, op)
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t._bw = None
        t._grad_owned = False
        t._released = False
        t.op = op
        if _grad_enabled:
            parents = tuple(p for p in parents if p.requires_grad)
        else:
            parents = ()
        t._parents = parents
        t.requires_grad = bool(parents)
        return t

    # -- metadata ------------------------------------------------------------
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
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self.op}{grad})"

    # -- gradient plumbing -----------------------------------------------------
    def _accum(self, g: np.ndarray) -> None:
        is_leaf = self._bw is None
        if self.grad is None:
            if is_leaf:
                # leaves keep their gradient after backward; own the buffer
                self.grad = np.array(g, copy=True)
                self._grad_owned = True
            else:
                # intermediates may receive a shared/viewed array; copy
                # lazily only if a second contribution arrives
                self.grad = g
                self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    def zero_grad(self) -> None:
        self.grad = None
        self._grad_owned = False

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._bw = None
        t._grad_owned = False
        t._released = False
        t.op = "detach"
        return t

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; releases the graph afterwards."""
        if self.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        if self._released:
            raise RuntimeError("graph already released by a previous backward")
        if not self.requires_grad:
            raise RuntimeError("scalar does not require grad; nothing to differentiate")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._bw is not None:
                if node.grad is not None:
                    node._bw(node.grad)
                node.grad = None  # free as soon as propagated
        for node in topo:
            if node._bw is not None:
                node._bw = None
                node._parents = ()
                node._released = True
        self._released = True

    # -- operator sugar ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    out = Tensor._from_op(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(g if a.data.shape == g.shape else g.sum().reshape(a.data.shape))
            if b.requires_grad:
                b._accum(g if b.data.shape == g.shape else g.sum().reshape(b.data.shape))
        out._bw = bw
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = Tensor._from_op(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(g if a.data.shape == g.shape else g.sum().reshape(a.data.shape))
            if b.requires_grad:
                b._accum(-g if b.data.shape == g.shape else -g.sum().reshape(b.data.shape))
        out._bw = bw
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = Tensor._from_op(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        ad, bd = a.data, b.data
        def bw(g):
            if a.requires_grad:
                ga = g * bd
                a._accum(ga if a.data.shape == ga.shape else ga.sum().reshape(a.data.shape))
            if b.requires_grad:
                gb = g * ad
                b._accum(gb if b.data.shape == gb.shape else gb.sum().reshape(b.data.shape))
        out._bw = bw
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "div")
    out = Tensor._from_op(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        ad, bd = a.data, b.data
        def bw(g):
            if a.requires_grad:
                ga = g / bd
                a._accum(ga if a.data.shape == ga.shape else ga.sum().reshape(a.data.shape))
            if b.requires_grad:
                gb = -g * ad / (bd * bd)
                b._accum(gb if b.data.shape == gb.shape else gb.sum().reshape(b.data.shape))
        out._bw = bw
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor._from_op(np.maximum(x.data, 0), (x,), "relu")
    if out.requires_grad:
        mask = x.data > 0
        out._bw = lambda g: x._accum(g * mask)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    out = Tensor._from_op(y, (x,), "sigmoid")
    if out.requires_grad:
        out._bw = lambda g: x._accum(g * (y * (1.0 - y)))
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor._from_op(np.log(x.data), (x,), "log")
    if out.requires_grad:
        out._bw = lambda g: x._accum(g / x.data)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor._from_op(np.clip(x.data, lo, hi), (x,), "clamp")
    if out.requires_grad:
        mask = (x.data >= lo) & (x.data <= hi)
        out._bw = lambda g: x._accum(g * mask)
    return out


def tsum(x: Tensor) -> Tensor:
    out = Tensor._from_op(x.data.sum(dtype=x.data.dtype).reshape(()), (x,), "sum")
    if out.requires_grad:
        out._bw = lambda g: x._accum(np.broadcast_to(g, x.data.shape))
    return out


def tmean(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor._from_op((x.data.sum(dtype=x.data.dtype) / n).reshape(()), (x,), "mean")
    if out.requires_grad:
        out._bw = lambda g: x._accum(np.broadcast_to(g / n, x.data.shape))
    return out


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor._from_op(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:
        out._bw = lambda g: x._accum(g.reshape(x.data.shape))
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor._from_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), "transpose")
    if out.requires_grad:
        inv = tuple(np.argsort(axes))
        out._bw = lambda g: x._accum(np.ascontiguousarray(g.transpose(inv)))
    return out


def concat_channels(parts: list[Tensor]) -> Tensor:
    ref = parts[0].data.shape
    for p in parts[1:]:
        if p.data.shape[:1] + p.data.shape[2:] != ref[:1] + ref[2:]:
            raise ValueError(
                f"concat_channels: non-channel extents differ: {ref} vs {p.data.shape}")
    out = Tensor._from_op(np.concatenate([p.data for p in parts], axis=1),
                          tuple(parts), "concat")
    if out.requires_grad:
        sizes = [p.data.shape[1] for p in parts]
        offsets = np.cumsum([0] + sizes)
        def bw(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p._accum(np.ascontiguousarray(g[:, lo:hi]))
        out._bw = bw
    return out


# ---------------------------------------------------------------------------
# network ops
# ---------------------------------------------------------------------------

def _per_axis(value, n: int, name: str) -> tuple:
    if isinstance(value, int):
        return (value,) * n
    value = tuple(value)
    if len(value) != n:
        raise ValueError(f"{name} must have {n} entries, got {value}")
    return value


def conv(x: Tensor, w: Tensor, b: Tensor, stride=1, padding=None) -> Tensor:
    """2-D or 3-D convolution; dimensionality follows the operand ranks."""
    dims = x.ndim - 2
    if dims not in (2, 3):
        raise ValueError(f"conv expects rank-4 or rank-5 input, got shape {x.shape}")
    if w.ndim != x.ndim:
        raise ValueError(f"kernel rank {w.ndim} does not match input rank {x.ndim}")
    if w.data.shape[1] != x.data.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.data.shape[1]}, kernel expects {w.data.shape[1]}")
    k = w.data.shape[2:]
    stride = _per_axis(stride, dims, "stride")
    if padding is None:
        padding = tuple(ki // 2 for ki in k)
    else:
        padding = _per_axis(padding, dims, "padding")
    for size, ki, si, pi in zip(x.data.shape[2:], k, stride, padding):
        if (size + 2 * pi - ki) // si + 1 <= 0:
            raise ValueError(f"non-positive output extent for input {x.shape}, kernel {k}")

    if dims == 2:
        fwd, bwd_x, bwd_w = (backend.conv2d_forward,
                             backend.conv2d_backward_input,
                             backend.conv2d_backward_weights)
    else:
        fwd, bwd_x, bwd_w = (backend.conv3d_forward,
                             backend.conv3d_backward_input,
                             backend.conv3d_backward_weights)

    out = Tensor._from_op(fwd(x.data, w.data, b.data, stride, padding),
                          (x, w, b), "conv")
    if out.requires_grad:
        xd, wd = x.data, w.data
        def bw(g):
            g = np.ascontiguousarray(g)
            if x.requires_grad:
                x._accum(bwd_x(g, wd, xd.shape, stride, padding))
            if w.requires_grad or b.requires_grad:
                dw, db = bwd_w(g, xd, wd.shape, stride, padding)
                if w.requires_grad:
                    w._accum(dw)
                if b.requires_grad:
                    b._accum(db)
        out._bw = bw
    return out


def maxpool(x: Tensor, window) -> Tensor:
    dims = x.ndim - 2
    window = _per_axis(window, dims, "window")
    y, idx = backend.maxpool_forward(x.data, window)
    out = Tensor._from_op(y, (x,), "maxpool")
    if out.requires_grad:
        out._bw = lambda g: x._accum(
            backend.maxpool_backward(g, idx, x.data.shape, window))
    return out


def upsample_nearest(x: Tensor, factors) -> Tensor:
    dims = x.ndim - 2
    factors = _per_axis(factors, dims, "factors")
    if any(f < 1 for f in factors):
        raise ValueError(f"upsample factors must be >= 1, got {factors}")
    out = Tensor._from_op(backend.upsample_nearest_forward(x.data, factors),
                          (x,), "upsample")
    if out.requires_grad:
        out._bw = lambda g: x._accum(
            backend.upsample_nearest_backward(g, factors, x.data.shape))
    return out


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (batch, *spatial).

    Train mode normalizes by batch statistics (biased variance) and updates
    the running buffers in place; eval mode applies the running statistics
    as a fixed affine map.
    """
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ValueError(f"batchnorm affine params must have shape ({C},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)

    if training:
        mean = x.data.mean(axis=axes, dtype=x.data.dtype)
        var = x.data.var(axis=axes, dtype=x.data.dtype)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * invstd.reshape(bshape)
    y = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    out = Tensor._from_op(y, (x, gamma, beta), "batchnorm")
    if out.requires_grad:
        m = x.size // C
        def bw(g):
            if gamma.requires_grad:
                gamma._accum((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta._accum(g.sum(axis=axes))
            if x.requires_grad:
                scale = gamma.data.reshape(bshape) * invstd.reshape(bshape)
                if training:
                    gsum = g.sum(axis=axes).reshape(bshape)
                    gxsum = (g * xhat).sum(axis=axes).reshape(bshape)
                    x._accum(scale * (g - gsum / m - xhat * gxsum / m))
                else:
                    x._accum(scale * g)
        out._bw = bw
    return out
