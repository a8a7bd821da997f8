"""Informative slice selection: per-slice histogram entropy and top-K ranking.

A slice's Shannon entropy, computed from its intensity histogram, measures
how much intensity variation it carries; slices are ranked in descending
entropy and the top K are kept as the most informative training images.

Entropy is reported in bits (log base 2). The ranking is invariant to the
log base and to any permutation of histogram bins, which the test suite
asserts; the base is purely presentational.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateRange, EmptyVolume
from .volume_io import Volume


class Axis(str, Enum):
    X = "x"
    Y = "y"
    Z = "z"


class RangeMode(str, Enum):
    """Intensity range used for binning: shared per volume, or per slice."""

    PER_VOLUME = "per_volume"
    PER_SLICE = "per_slice"


@dataclass
class Slice2D:
    """A 2D image cut from a volume; pixels is float64, shape (height, width)."""

    pixels: np.ndarray
    slice_index: int = 0

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"pixels must be 2D, got shape {self.pixels.shape}")
        if self.slice_index < 0:
            raise ValueError("slice_index must be >= 0")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class Histogram:
    """Intensity histogram: integer counts over `bins` equal-width bins."""

    counts: np.ndarray
    total: int
    range: tuple[float, float]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size < 2:
            raise ValueError("counts must be a 1D array with at least 2 bins")
        if (self.counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if int(self.counts.sum()) != self.total:
            raise ValueError("total must equal sum(counts)")
        if self.total < 1:
            raise ValueError("total must be >= 1")


@dataclass(frozen=True)
class EntropyScore:
    slice_index: int
    entropy_bits: float


@dataclass
class SelectionConfig:
    """How to rank and select slices. Defaults: top 32 axial slices,
    256 bins over the volume-global intensity range."""

    k: int = 32
    bins: int = 256
    axis: Axis = Axis.Z
    range_mode: RangeMode = RangeMode.PER_VOLUME

    def __post_init__(self):
        self.axis = Axis(self.axis)
        self.range_mode = RangeMode(self.range_mode)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")


def extract_slices(volume: Volume, axis: Axis = Axis.Z) -> list[Slice2D]:
    """Cut a volume into 2D slices along one axis.

    Rows and columns follow storage order: the remaining faster-varying
    axis becomes the slice's width, the slower one its height. Pixel data
    is copied, never aliased.
    """
    axis = Axis(axis)
    zyx = volume.as_zyx()
    if axis is Axis.Z:
        planes = [zyx[i] for i in range(zyx.shape[0])]
    elif axis is Axis.Y:
        planes = [zyx[:, i, :] for i in range(zyx.shape[1])]
    else:
        planes = [zyx[:, :, i] for i in range(zyx.shape[2])]
    return [Slice2D(pixels=p.copy(), slice_index=i) for i, p in enumerate(planes)]


def build_histogram(slice2d: Slice2D, bins: int, value_range: tuple[float, float]) -> Histogram:
    """Histogram a slice's pixels over [lo, hi) with equal-width bins.

    A pixel p maps to bin floor((p - lo) / (hi - lo) * bins), clamped to
    [0, bins - 1]; values at or beyond hi land in the last bin, values
    below lo in the first.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    lo, hi = value_range
    if not lo < hi:
        raise DegenerateRange(f"binning range ({lo}, {hi}) has zero or negative width")
    idx = np.floor((slice2d.pixels.reshape(-1) - lo) / (hi - lo) * bins)
    idx = np.clip(idx, 0, bins - 1).astype(np.int64)
    counts = np.bincount(idx, minlength=bins)
    return Histogram(counts=counts, total=slice2d.pixels.size, range=(lo, hi))


def entropy_bits(histogram: Histogram) -> float:
    """Shannon entropy of the bin distribution, in bits.

    H = -sum over nonempty bins of p_i * log2(p_i) with p_i = count_i / total.
    Empty bins contribute nothing (the 0 log 0 = 0 convention).
    """
    counts = histogram.counts[histogram.counts > 0]
    p = counts / float(histogram.total)
    return float(-(p * np.log2(p)).sum())


def rank_slices(volume: Volume, cfg: SelectionConfig) -> list[EntropyScore]:
    """Score every slice by histogram entropy and keep the top k.

    Scores are sorted by entropy descending, ties broken by ascending
    slice index, and truncated to min(k, slice count) entries. Slices with
    a degenerate binning range (constant data) score 0 so blank border
    slices sort last instead of aborting the run.
    """
    slices = extract_slices(volume, cfg.axis)
    if not slices:
        raise EmptyVolume(f"no slices along axis {cfg.axis}")

    scores = []
    for s in slices:
        if cfg.range_mode is RangeMode.PER_VOLUME:
            rng = volume.value_range
        else:
            rng = (float(s.pixels.min()), float(s.pixels.max()))
        if rng[0] == rng[1]:
            h = 0.0
        else:
            h = entropy_bits(build_histogram(s, cfg.bins, rng))
        scores.append(EntropyScore(slice_index=s.slice_index, entropy_bits=h))

    scores.sort(key=lambda sc: (-sc.entropy_bits, sc.slice_index))
    return scores[: min(cfg.k, len(scores))]


def selection_report(source_id: str, cfg: SelectionConfig,
                     scores: list[EntropyScore]) -> dict:
    """Selection output document (JSON-serializable), in ranked order."""
    return {
        "source_id": source_id,
        "axis": cfg.axis.value,
        "k": cfg.k,
        "bins": cfg.bins,
        "range_mode": cfg.range_mode.value,
        "selected": [
            {"slice_index": s.slice_index, "entropy_bits": s.entropy_bits}
            for s in scores
        ],
    }
