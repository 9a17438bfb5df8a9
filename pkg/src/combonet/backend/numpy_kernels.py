"""Pure numpy convolution/pooling kernels.

Convolutions are evaluated as one GEMM per kernel offset ("shift-GEMM"):
for a k*k (or k*k*k) kernel the padded input is sliced once per offset and
multiplied by the matching (C_out, C_in) weight slab. This keeps every
matmul on the BLAS fast path (weight slabs are copied contiguous first;
a strided 2-D operand silently drops numpy onto its slow inner loop).

All accumulation orders are fixed, so results are bit-reproducible for a
given build and thread count.
"""
from __future__ import annotations

import numpy as np

NAME = "numpy"


def _out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# 2-D convolution: x (N, C, H, W), w (O, C, kh, kw)
# ---------------------------------------------------------------------------

def conv2d_forward(x, w, b, stride=(1, 1), pad=(1, 1)):
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    Ho, Wo = _out_extent(H, kh, sh, ph), _out_extent(W, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    wt = np.ascontiguousarray(w.transpose(2, 3, 0, 1))  # (kh, kw, O, C)
    y = np.empty((N, O, Ho * Wo), dtype=x.dtype)
    y[:] = b.reshape(1, O, 1)
    for a in range(kh):
        for c in range(kw):
            v = xp[:, :, a:a + sh * (Ho - 1) + 1:sh, c:c + sw * (Wo - 1) + 1:sw]
            v = np.ascontiguousarray(v).reshape(N, C, Ho * Wo)
            y += np.matmul(wt[a, c], v)
    return y.reshape(N, O, Ho, Wo)


def conv2d_backward_input(dy, w, x_shape, stride=(1, 1), pad=(1, 1)):
    N, C, H, W = x_shape
    O, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    _, _, Ho, Wo = dy.shape
    dyf = dy.reshape(N, O, Ho * Wo)
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # (kh, kw, C, O)
    dxp = np.zeros((N, C, H + 2 * ph, W + 2 * pw), dtype=dy.dtype)
    for a in range(kh):
        for c in range(kw):
            g = np.matmul(wt[a, c], dyf).reshape(N, C, Ho, Wo)
            dxp[:, :, a:a + sh * (Ho - 1) + 1:sh, c:c + sw * (Wo - 1) + 1:sw] += g
    return dxp[:, :, ph:ph + H, pw:pw + W]


def conv2d_backward_weights(dy, x, w_shape, stride=(1, 1), pad=(1, 1)):
    N, C, H, W = x.shape
    O, _, kh, kw = w_shape
    sh, sw = stride
    ph, pw = pad
    _, _, Ho, Wo = dy.shape
    dyf = dy.reshape(N, O, Ho * Wo)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    dw = np.empty(w_shape, dtype=dy.dtype)
    for a in range(kh):
        for c in range(kw):
            v = xp[:, :, a:a + sh * (Ho - 1) + 1:sh, c:c + sw * (Wo - 1) + 1:sw]
            v = np.ascontiguousarray(v).reshape(N, C, Ho * Wo)
            dw[:, :, a, c] = np.tensordot(dyf, v, axes=([0, 2], [0, 2]))
    db = dyf.sum(axis=(0, 2))
    return dw, db


# ---------------------------------------------------------------------------
# 3-D convolution: x (N, C, H, W, D), w (O, C, kh, kw, kd)
# ---------------------------------------------------------------------------

def conv3d_forward(x, w, b, stride=(1, 1, 1), pad=(1, 1, 1)):
    N, C, H, W, D = x.shape
    O, _, kh, kw, kd = w.shape
    sh, sw, sd = stride
    ph, pw, pd = pad
    Ho = _out_extent(H, kh, sh, ph)
    Wo = _out_extent(W, kw, sw, pw)
    Do = _out_extent(D, kd, sd, pd)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw), (pd, pd)))
    wt = np.ascontiguousarray(w.transpose(2, 3, 4, 0, 1))
    P = Ho * Wo * Do
    y = np.empty((N, O, P), dtype=x.dtype)
    y[:] = b.reshape(1, O, 1)
    for a in range(kh):
        for c in range(kw):
            for e in range(kd):
                v = xp[:, :, a:a + sh * (Ho - 1) + 1:sh,
                       c:c + sw * (Wo - 1) + 1:sw,
                       e:e + sd * (Do - 1) + 1:sd]
                v = np.ascontiguousarray(v).reshape(N, C, P)
                y += np.matmul(wt[a, c, e], v)
    return y.reshape(N, O, Ho, Wo, Do)


def conv3d_backward_input(dy, w, x_shape, stride=(1, 1, 1), pad=(1, 1, 1)):
    N, C, H, W, D = x_shape
    O, _, kh, kw, kd = w.shape
    sh, sw, sd = stride
    ph, pw, pd = pad
    _, _, Ho, Wo, Do = dy.shape
    dyf = dy.reshape(N, O, Ho * Wo * Do)
    wt = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0))
    dxp = np.zeros((N, C, H + 2 * ph, W + 2 * pw, D + 2 * pd), dtype=dy.dtype)
    for a in range(kh):
        for c in range(kw):
            for e in range(kd):
                g = np.matmul(wt[a, c, e], dyf).reshape(N, C, Ho, Wo, Do)
                dxp[:, :, a:a + sh * (Ho - 1) + 1:sh,
                    c:c + sw * (Wo - 1) + 1:sw,
                    e:e + sd * (Do - 1) + 1:sd] += g
    return dxp[:, :, ph:ph + H, pw:pw + W, pd:pd + D]


def conv3d_backward_weights(dy, x, w_shape, stride=(1, 1, 1), pad=(1, 1, 1)):
    N, C, H, W, D = x.shape
    O, _, kh, kw, kd = w_shape
    sh, sw, sd = stride
    ph, pw, pd = pad
    _, _, Ho, Wo, Do = dy.shape
    dyf = dy.reshape(N, O, Ho * Wo * Do)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw), (pd, pd)))
    dw = np.empty(w_shape, dtype=dy.dtype)
    for a in range(kh):
        for c in range(kw):
            for e in range(kd):
                v = xp[:, :, a:a + sh * (Ho - 1) + 1:sh,
                       c:c + sw * (Wo - 1) + 1:sw,
                       e:e + sd * (Do - 1) + 1:sd]
                v = np.ascontiguousarray(v).reshape(N, C, Ho * Wo * Do)
                dw[:, :, a, c, e] = np.tensordot(dyf, v, axes=([0, 2], [0, 2]))
    db = dyf.sum(axis=(0, 2))
    return dw, db


# ---------------------------------------------------------------------------
# Max pooling. Window == stride (non-overlapping), extents must divide.
# Ties break to the first element in row-major window scan order.
# ---------------------------------------------------------------------------

def maxpool_forward(x, window):
    spatial = x.shape[2:]
    for size, win in zip(spatial, window):
        if win > 1 and size % win != 0:
            raise ValueError(
                f"pool window {window} does not divide spatial extents {spatial}")
    lead = x.shape[:2]
    split = []
    for size, win in zip(spatial, window):
        split.extend((size // win, win))
    xs = x.reshape(lead + tuple(split))
    # move the window axes last: (N, C, o1, o2, ..., w1, w2, ...)
    n_sp = len(spatial)
    out_axes = [0, 1] + [2 + 2 * i for i in range(n_sp)]
    win_axes = [3 + 2 * i for i in range(n_sp)]
    xs = xs.transpose(out_axes + win_axes)
    out_shape = xs.shape[:2 + n_sp]
    wsize = int(np.prod(window))
    flat = np.ascontiguousarray(xs).reshape(out_shape + (wsize,))
    idx = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return y, idx.astype(np.int64)


def maxpool_backward(dy, idx, x_shape, window):
    spatial = x_shape[2:]
    n_sp = len(spatial)
    wsize = int(np.prod(window))
    flat = np.zeros(dy.shape + (wsize,), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
    out_sp = tuple(s // w for s, w in zip(spatial, window))
    blocks = flat.reshape(dy.shape[:2] + out_sp + tuple(window))
    # invert the transpose from the forward pass
    inv = [0, 1]
    for i in range(n_sp):
        inv.extend((2 + i, 2 + n_sp + i))
    return blocks.transpose(inv).reshape(x_shape)


# ---------------------------------------------------------------------------
# Nearest-neighbour upsampling by integer factors per spatial axis.
# ---------------------------------------------------------------------------

def upsample_nearest_forward(x, factors):
    lead = x.shape[:2]
    spatial = x.shape[2:]
    view = x.reshape(lead + tuple(v for s in spatial for v in (s, 1)))
    target = lead + tuple(v for s, f in zip(spatial, factors) for v in (s, f))
    out = np.broadcast_to(view, target)
    final = lead + tuple(s * f for s, f in zip(spatial, factors))
    return np.ascontiguousarray(out).reshape(final)


def upsample_nearest_backward(dy, factors, x_shape):
    lead = x_shape[:2]
    spatial = x_shape[2:]
    blocks = dy.reshape(lead + tuple(v for s, f in zip(spatial, factors) for v in (s, f)))
    axes = tuple(3 + 2 * i for i in range(len(spatial)))
    return blocks.sum(axis=axes)
