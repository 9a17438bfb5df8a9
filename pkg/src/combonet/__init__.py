"""ComboNet: fused 2D/3D UNet segmentation with a self-contained autodiff core."""

from .backend import ACTIVE as active_backend  # noqa: F401

__version__ = "0.1.0"
