"""Rotated RoIAlign on dense feature maps.

Coordinate model: feature value ``data[c, i, j]`` sits at the continuous point
``(x, y) = (j + 0.5, i + 0.5)``.  A sample at ``(x, y)`` is bilinearly
interpolated from the four surrounding pixel centers; neighbors outside the
map read as zero, which keeps pooling linear in the map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RotatedBox

DEFAULT_OUT_SIZE = 7
DEFAULT_SAMPLING_RATIO = 2


class ShapeMismatch(ValueError):
    pass


class InvalidSize(ValueError):
    pass


@dataclass
class FeatureMap:
    """Dense ``(C, H, W)`` feature grid."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeMismatch(f"feature map must be (C, H, W), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class PooledFeature:
    """Pooled ``(C, S, S)`` region feature."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[1] != self.data.shape[2]:
            raise ShapeMismatch(f"pooled feature must be (C, S, S), got shape {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def size(self) -> int:
        return self.data.shape[1]

    def flatten(self) -> np.ndarray:
        return self.data.reshape(-1)


def sample_points(box: RotatedBox, out_size: int, sampling_ratio: int) -> tuple[np.ndarray, np.ndarray]:
    """World coordinates of all samples, each shaped ``(S*r, S*r)`` (rows along h)."""
    n = out_size * sampling_ratio
    frac = (np.arange(n) + 0.5) / n - 0.5
    lu = frac * box.w
    lv = frac * box.h
    LV, LU = np.meshgrid(lv, lu, indexing="ij")
    c, s = math.cos(box.theta), math.sin(box.theta)
    xs = box.cx + LU * c - LV * s
    ys = box.cy + LU * s + LV * c
    return xs, ys


def bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Zero-padded bilinear lookup; returns ``(C,) + xs.shape``."""
    _, H, W = data.shape
    px = xs - 0.5
    py = ys - 0.5
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0
    out = np.zeros((data.shape[0],) + xs.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        yi = y0 + dy
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            if not ok.any():
                continue
            vals = np.zeros((data.shape[0],) + xs.shape)
            vals[:, ok] = data[:, yi[ok], xi[ok]]
            out += vals * (wx * wy)
    return out


def rotated_roi_align(
    fm: FeatureMap,
    box: RotatedBox,
    out_size: int = DEFAULT_OUT_SIZE,
    sampling_ratio: int = DEFAULT_SAMPLING_RATIO,
) -> PooledFeature:
    """Pool ``fm`` on an ``out_size`` x ``out_size`` grid laid out in the box frame.

    Each output cell averages ``sampling_ratio**2`` bilinear samples at regular
    offsets inside the cell.  Output row index runs along the box height,
    column index along the box width.
    """
    if out_size < 1:
        raise InvalidSize("out_size must be positive")
    if sampling_ratio < 1:
        raise InvalidSize("sampling_ratio must be positive")
    xs, ys = sample_points(box, out_size, sampling_ratio)
    vals = bilinear(fm.data, xs, ys)
    C = fm.channels
    vals = vals.reshape(C, out_size, sampling_ratio, out_size, sampling_ratio)
    return PooledFeature(vals.mean(axis=(2, 4)))


def _check_same(a: PooledFeature, b: PooledFeature) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"shape {a.data.shape} != {b.data.shape}")


def subtract(a: PooledFeature, b: PooledFeature) -> PooledFeature:
    _check_same(a, b)
    return PooledFeature(a.data - b.data)


def fuse(reference: PooledFeature, aligned_sensed: PooledFeature) -> PooledFeature:
    _check_same(reference, aligned_sensed)
    return PooledFeature(reference.data + aligned_sensed.data)
