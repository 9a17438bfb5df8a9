"""Fusion of the full-resolution 2D path and the subsampled 3D path.

The two sub-networks run headless (no sigmoid) and their logit maps act
as shape priors: the 3D logits are upsampled 4x in plane, both maps are
pointwise multiplied with the input image, concatenated to a two-channel
tensor, and passed through the two combiner convolutions. The combiner
variant decides whether those convolutions (and the tensor layout) are
2D or 3D; the sub-networks are identical in both variants.

Batches stay aligned across paths by construction: one 3D volume of D
slices occupies D consecutive rows of the 2D batch, so a 3D batch of B
volumes pairs with a 2D batch of B*D slices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import BatchNorm, Conv, Module
from .tensor import Tensor
from .unet import UNet

COMBINER_WIDTH = 16
INPLANE_FACTOR = 4


@dataclass(frozen=True)
class BatchBinding:
    """Pairing of one 3D batch with the 2D batch that carries its slices."""
    batch3d: int
    depth_window: int

    @property
    def batch2d(self) -> int:
        return self.batch3d * self.depth_window


def bind_batches(batch3d: int, depth_window: int) -> BatchBinding:
    if batch3d <= 0 or depth_window <= 0:
        raise ValueError("batch sizes must be positive")
    return BatchBinding(batch3d=batch3d, depth_window=depth_window)


def stack_2d_to_3d(x: Tensor, depth_window: int) -> Tensor:
    """(B*D, 1, H, W) -> (B, 1, H, W, D); slice d of volume b is row b*D+d."""
    n, c, h, w = x.shape
    if n % depth_window != 0:
        raise ValueError(f"batch {n} is not a multiple of the window {depth_window}")
    b = n // depth_window
    v = T.reshape(x, (b, depth_window, c, h, w))
    return T.transpose(v, (0, 2, 3, 4, 1))


def flatten_3d_to_2d(x: Tensor) -> Tensor:
    """(B, 1, H, W, D) -> (B*D, 1, H, W); exact inverse of stack_2d_to_3d."""
    b, c, h, w, d = x.shape
    v = T.transpose(x, (0, 4, 1, 2, 3))
    return T.reshape(v, (b * d, c, h, w))


class Combiner(Module):
    """Two convolutions fusing [image*logits2d, image*logits3d] into probabilities."""

    def __init__(self, dims: int, rng: np.random.Generator,
                 width: int = COMBINER_WIDTH, dtype=np.float32):
        super().__init__()
        if dims not in (2, 3):
            raise ValueError(f"combiner dims must be 2 or 3, got {dims}")
        self._dims = dims
        self.conv1 = Conv(dims, 2, width, rng, dtype=dtype)
        self.norm1 = BatchNorm(width, dtype=dtype)
        self.conv2 = Conv(dims, width, 1, rng, dtype=dtype)

    @property
    def dims(self) -> int:
        return self._dims

    def forward(self, feats: Tensor) -> Tensor:
        h = T.relu(self.norm1(self.conv1(feats)))
        return T.sigmoid(self.conv2(h))


def combiner_forward(img_full: Tensor, logits2d: Tensor, logits3d_low: Tensor,
                     combiner: Combiner) -> Tensor:
    """Run the fusion stage on precomputed logits.

    img_full and logits2d are slice-stacked (B*D, 1, H, W); logits3d_low is
    (B, 1, H/4, W/4, D). Output layout follows the combiner variant:
    (B*D, 1, H, W) for 2D, (B, 1, H, W, D) for 3D.
    """
    n, _, h, w = img_full.shape
    if logits2d.shape != img_full.shape:
        raise ValueError(f"2D logits shape {logits2d.shape} != image {img_full.shape}")
    b, c3, h3, w3, d = logits3d_low.shape
    if h3 * INPLANE_FACTOR != h or w3 * INPLANE_FACTOR != w:
        raise ValueError(
            f"3D logits must be exactly {INPLANE_FACTOR}x subsampled in plane: "
            f"{(h3, w3)} vs full {(h, w)}")
    if b * d != n:
        raise ValueError(f"batch mismatch: {b} volumes x {d} slices != {n} rows")

    up3d = T.upsample_nearest(logits3d_low, (INPLANE_FACTOR, INPLANE_FACTOR, 1))
    if combiner.dims == 2:
        prior3d = flatten_3d_to_2d(up3d)
        feats = T.concat_channels([T.mul(img_full, logits2d),
                                   T.mul(img_full, prior3d)])
    else:
        img3 = stack_2d_to_3d(img_full, d)
        prior2d = stack_2d_to_3d(logits2d, d)
        feats = T.concat_channels([T.mul(img3, prior2d),
                                   T.mul(img3, up3d)])
    return combiner(feats)


class ComboNet(Module):
    """End-to-end fused model: 2D UNet + 3D UNet + combiner."""

    def __init__(self, net2d: UNet, net3d: UNet, combiner: Combiner):
        super().__init__()
        self.net2d = net2d
        self.net3d = net3d
        self.combiner = combiner

    @property
    def variant(self) -> str:
        return f"combiner-{self.combiner.dims}d"

    @property
    def depth_window(self) -> int:
        return self.net3d.config.depth_window

    def forward(self, full_stack: Tensor, low_volume: Tensor) -> Tensor:
        logits2d = self.net2d(full_stack)
        logits3d = self.net3d(low_volume)
        return combiner_forward(full_stack, logits2d, logits3d, self.combiner)

    def param_groups(self) -> dict[str, list]:
        return {"2d": self.net2d.parameters(),
                "3d": self.net3d.parameters(),
                "combiner": self.combiner.parameters()}


def assemble_combonet(net2d: UNet, net3d: UNet, variant: str,
                      rng: np.random.Generator,
                      width: int = COMBINER_WIDTH) -> ComboNet:
    """Wire two headless sub-networks into a ComboNet with a fresh combiner."""
    if net2d._with_sigmoid or net3d._with_sigmoid:
        raise ValueError("sub-networks must be built headless (with_sigmoid=False)")
    if net2d.config.input_spatial != INPLANE_FACTOR * net3d.config.input_spatial:
        raise ValueError(
            f"in-plane relationship must be exactly {INPLANE_FACTOR}x: "
            f"2D {net2d.config.input_spatial} vs 3D {net3d.config.input_spatial}")
    if variant not in ("combonet-2d", "combonet-3d"):
        raise ValueError(f"unknown variant {variant!r}")
    dims = 2 if variant == "combonet-2d" else 3
    dtype = net2d.head.w.data.dtype
    return ComboNet(net2d, net3d, Combiner(dims, rng, width=width, dtype=dtype))
