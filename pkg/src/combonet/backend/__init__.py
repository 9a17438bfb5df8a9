"""Kernel backend selection.

Two interchangeable convolution backends exist:

* ``compiled`` -- Cython core (`combonet.backend._core`) that builds an
  im2col buffer in C and issues a single BLAS GEMM per convolution.
* ``numpy``    -- pure numpy shift-GEMM kernels, always available.

The compiled core is preferred when the extension was built; set
``COMBONET_BACKEND=numpy`` (or ``compiled``) to force one. Pooling and
upsampling are cheap and shared by both backends.

The two backends are numerically equivalent but not bit-identical to each
other (different summation orders); each one is deterministic on its own,
which is what the reproducibility guarantees are stated against.
"""
from __future__ import annotations

import os

from . import numpy_kernels

_CONV_FUNCS = (
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_weights",
    "conv3d_forward",
    "conv3d_backward_input",
    "conv3d_backward_weights",
)

maxpool_forward = numpy_kernels.maxpool_forward
maxpool_backward = numpy_kernels.maxpool_backward
upsample_nearest_forward = numpy_kernels.upsample_nearest_forward
upsample_nearest_backward = numpy_kernels.upsample_nearest_backward


def _load(name: str):
    if name == "numpy":
        return numpy_kernels
    if name == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r} (expected 'compiled' or 'numpy')")


def available_backends() -> list[str]:
    names = []
    try:
        from . import _core  # noqa: F401
        names.append("compiled")
    except ImportError:
        pass
    names.append("numpy")
    return names


_requested = os.environ.get("COMBONET_BACKEND", "").strip()
if _requested:
    _active = _load(_requested)
else:
    try:
        _active = _load("compiled")
    except ImportError:
        _active = numpy_kernels

ACTIVE = _active.NAME

conv2d_forward = _active.conv2d_forward
conv2d_backward_input = _active.conv2d_backward_input
conv2d_backward_weights = _active.conv2d_backward_weights
conv3d_forward = _active.conv3d_forward
conv3d_backward_input = _active.conv3d_backward_input
conv3d_backward_weights = _active.conv3d_backward_weights


def get_backend(name: str | None = None):
    """Return the kernel module for `name` (active backend if None)."""
    return _active if name is None else _load(name)
