"""Turn selected slices into network-ready tensors.

Resizing uses half-pixel-center bilinear sampling with border clamping, so
an identity-size resize reproduces the input exactly. Model inputs are the
resized slice mapped to [0, 1] and replicated into three identical channels
(ImageNet-shaped networks expect 3 channels; MRI slices have one).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .slice_select import Slice2D


class NormMode(str, Enum):
    UNIT_RANGE = "unit_range"
    MEAN_STD = "mean_std"


@dataclass
class NormalizationSpec:
    """Normalization applied after the unit-range mapping.

    UNIT_RANGE stops there; MEAN_STD additionally subtracts `mean` and
    divides by `std` per channel (for weight containers that declare an
    expected input distribution).
    """

    mode: NormMode = NormMode.UNIT_RANGE
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.mode = NormMode(self.mode)
        if self.mode is NormMode.MEAN_STD and any(s <= 0 for s in self.std):
            raise ValueError("std must be positive in mean_std mode")


def resize_bilinear(slice2d: Slice2D, out_w: int, out_h: int) -> Slice2D:
    """Bilinear resize with half-pixel centers and border clamp.

    The source coordinate for output pixel (i, j) is
    ((j + 0.5) * w_in / w_out - 0.5, (i + 0.5) * h_in / h_out - 0.5);
    the four neighbors are clamped to the image border before blending.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be positive")
    img = slice2d.pixels
    h_in, w_in = img.shape

    src_x = (np.arange(out_w, dtype=np.float64) + 0.5) * (w_in / out_w) - 0.5
    src_y = (np.arange(out_h, dtype=np.float64) + 0.5) * (h_in / out_h) - 0.5

    x0 = np.floor(src_x)
    y0 = np.floor(src_y)
    fx = src_x - x0
    fy = src_y - y0

    x0c = np.clip(x0.astype(np.int64), 0, w_in - 1)
    x1c = np.clip(x0.astype(np.int64) + 1, 0, w_in - 1)
    y0c = np.clip(y0.astype(np.int64), 0, h_in - 1)
    y1c = np.clip(y0.astype(np.int64) + 1, 0, h_in - 1)

    top = (1.0 - fx)[None, :] * img[y0c][:, x0c] + fx[None, :] * img[y0c][:, x1c]
    bot = (1.0 - fx)[None, :] * img[y1c][:, x0c] + fx[None, :] * img[y1c][:, x1c]
    out = (1.0 - fy)[:, None] * top + fy[:, None] * bot
    return Slice2D(pixels=out, slice_index=slice2d.slice_index)


def to_model_input(slice2d: Slice2D, size: int, norm: NormalizationSpec,
                   dtype=np.float32) -> np.ndarray:
    """Resize to size x size, normalize, replicate to 3 channels.

    The unit-range mapping sends [slice min, slice max] (of the original
    slice) affinely onto [0, 1]; a constant slice maps to all 0.5. Returns
    an array of shape (3, size, size).
    """
    lo = float(slice2d.pixels.min())
    hi = float(slice2d.pixels.max())
    resized = resize_bilinear(slice2d, size, size).pixels
    if hi > lo:
        unit = (resized - lo) / (hi - lo)
    else:
        unit = np.full_like(resized, 0.5)
    channels = np.repeat(unit[None, :, :], 3, axis=0)
    if norm.mode is NormMode.MEAN_STD:
        mean = np.asarray(norm.mean, dtype=np.float64)[:, None, None]
        std = np.asarray(norm.std, dtype=np.float64)[:, None, None]
        channels = (channels - mean) / std
    return channels.astype(dtype)
