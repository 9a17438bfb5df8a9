"""UNet construction from the optimum block/feature-scale pattern.

For an in-plane extent E (power of two, >= 16) the derived network has
B = log2(E) - 3 encoder blocks, so the bottleneck is always 8x8 in plane.
Channels start at 64/fs with fs = 2^(B-3) and double per block, which
makes the deepest blocks identical across input sizes: the last encoder
block always carries 256 channels (the smallest skip tensor is 16x16x256)
and the central block always widens to 512. 3-D variants pool only in
plane; the slice axis keeps its full extent at every scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import BatchNorm, Conv, ConvBlock, Module
from .tensor import Tensor

BASE_WIDTH = 64
CENTRAL_MULT = 2


@dataclass(frozen=True)
class UNetConfig:
    dims: int
    input_spatial: int
    depth_window: int | None
    blocks: int
    convs_per_block: int
    feature_scale: float
    channel_ladder: tuple[int, ...]
    pool_window: tuple[int, ...]

    @property
    def central_channels(self) -> int:
        """Channel width of the bottleneck feature map entering the central block."""
        return self.channel_ladder[-1]

    @property
    def name(self) -> str:
        return f"{self.dims}d{self.input_spatial}"


def derive_config(dims: int, input_spatial: int,
                  depth_window: int | None = None) -> UNetConfig:
    if dims not in (2, 3):
        raise ValueError(f"dims must be 2 or 3, got {dims}")
    e = int(input_spatial)
    if e < 16 or e & (e - 1) != 0:
        raise ValueError(
            f"in-plane extent must be a power of two >= 16, got {input_spatial}")
    if dims == 3:
        if depth_window is None:
            depth_window = 20
    else:
        depth_window = None
    blocks = int(np.log2(e)) - 3
    fs = 2.0 ** (blocks - 3)
    ladder = tuple(int(BASE_WIDTH / fs) * 2 ** b for b in range(blocks))
    pool = (2, 2) if dims == 2 else (2, 2, 1)
    return UNetConfig(dims=dims, input_spatial=e, depth_window=depth_window,
                      blocks=blocks, convs_per_block=3, feature_scale=fs,
                      channel_ladder=ladder, pool_window=pool)


def central_shape(config: UNetConfig) -> tuple[int, ...]:
    """Spatial extents and channels of the bottleneck feature map."""
    plane = config.input_spatial // 2 ** config.blocks
    if config.dims == 2:
        return (plane, plane, config.central_channels)
    return (plane, plane, config.depth_window, config.central_channels)


class UNet(Module):
    """Encoder/decoder network with skip concatenation.

    Decoder levels run deepest-first; each level is nearest-neighbour
    upsampling, a 3^d convolution (+BN+ReLU) onto that level's width, skip
    concatenation, and a conv block. The head is a 1^d convolution to one
    channel, optionally followed by a sigmoid (the combiner consumes the
    raw logits, so the fused model builds its sub-networks headless).
    """

    def __init__(self, config: UNetConfig, rng: np.random.Generator,
                 with_sigmoid: bool = True, dtype=np.float32):
        super().__init__()
        self._config = config
        self._with_sigmoid = with_sigmoid
        d, n = config.dims, config.convs_per_block
        ladder = config.channel_ladder
        central = CENTRAL_MULT * ladder[-1]

        self.enc = []
        c_in = 1
        for c in ladder:
            self.enc.append(ConvBlock(d, c_in, c, rng, layers=n, dtype=dtype))
            c_in = c
        self.central = ConvBlock(d, ladder[-1], central, rng, layers=n, dtype=dtype)

        self.up_convs = []
        self.up_norms = []
        self.dec = []
        c_prev = central
        for c in reversed(ladder):
            self.up_convs.append(Conv(d, c_prev, c, rng, dtype=dtype))
            self.up_norms.append(BatchNorm(c, dtype=dtype))
            self.dec.append(ConvBlock(d, 2 * c, c, rng, layers=n, dtype=dtype))
            c_prev = c
        self.head = Conv(d, ladder[0], 1, rng, k=1, dtype=dtype)

    @property
    def config(self) -> UNetConfig:
        return self._config

    def forward(self, x: Tensor) -> Tensor:
        cfg = self._config
        skips = []
        h = x
        for block in self.enc:
            h = block(h)
            skips.append(h)
            h = T.maxpool(h, cfg.pool_window)
        h = self.central(h)
        for up, norm, block, skip in zip(self.up_convs, self.up_norms,
                                         self.dec, reversed(skips)):
            h = T.upsample_nearest(h, cfg.pool_window)
            h = T.relu(norm(up(h)))
            h = block(T.concat_channels([h, skip]))
        h = self.head(h)
        if self._with_sigmoid:
            h = T.sigmoid(h)
        return h


def build_unet(config: UNetConfig, rng: np.random.Generator,
               with_sigmoid: bool = True, dtype=np.float32) -> UNet:
    return UNet(config, rng, with_sigmoid=with_sigmoid, dtype=dtype)
