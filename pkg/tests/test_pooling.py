import math

import numpy as np
import pytest

from crossalign.geometry import RotatedBox
from crossalign.pooling import (
    FeatureMap,
    InvalidSize,
    PooledFeature,
    ShapeMismatch,
    fuse,
    rotated_roi_align,
    subtract,
)
from crossalign.rng import SplitMix64


def _grid(H, W):
    ys, xs = np.mgrid[0:H, 0:W]
    return xs + 0.5, ys + 0.5


def _scalar_roi_align(data, x1, y1, x2, y2, S, r):
    """Straight-line axis-aligned RoIAlign with the pixel-center convention."""
    C, H, W = data.shape

    def at(c, x, y):
        px, py = x - 0.5, y - 0.5
        x0, y0 = math.floor(px), math.floor(py)
        total = 0.0
        for yy, wy in ((y0, 1 - (py - y0)), (y0 + 1, py - y0)):
            for xx, wx in ((x0, 1 - (px - x0)), (x0 + 1, px - x0)):
                if 0 <= xx < W and 0 <= yy < H:
                    total += data[c, yy, xx] * wx * wy
        return total

    out = np.zeros((C, S, S))
    bw, bh = (x2 - x1) / S, (y2 - y1) / S
    for c in range(C):
        for i in range(S):
            for j in range(S):
                acc = 0.0
                for a in range(r):
                    for b in range(r):
                        y = y1 + (i + (a + 0.5) / r) * bh
                        x = x1 + (j + (b + 0.5) / r) * bw
                        acc += at(c, x, y)
                out[c, i, j] = acc / (r * r)
    return out


def test_constant_field():
    fm = FeatureMap(np.full((2, 40, 40), 5.0))
    out = rotated_roi_align(fm, RotatedBox(20, 20, 12, 6, 0.7))
    assert np.allclose(out.data, 5.0, atol=1e-12)


def test_ramp_matches_cell_centers():
    xs, _ = _grid(50, 60)
    fm = FeatureMap(xs[None])
    box = RotatedBox(30, 25, 14, 7, 0.0)
    out = rotated_roi_align(fm, box, 7, 2).data[0]
    centers = box.cx - box.w / 2 + (np.arange(7) + 0.5) * box.w / 7
    for i in range(7):
        assert out[i] == pytest.approx(centers, abs=1e-6)


def test_affine_field_exact_for_rotated_box():
    xs, ys = _grid(80, 80)
    fm = FeatureMap((1.5 * xs - 0.25 * ys + 3.0)[None])
    box = RotatedBox(40, 38, 20, 9, 1.1)
    S = 5
    out = rotated_roi_align(fm, box, S, 3).data[0]
    c, s = math.cos(box.theta), math.sin(box.theta)
    for i in range(S):
        for j in range(S):
            u = ((j + 0.5) / S - 0.5) * box.w
            v = ((i + 0.5) / S - 0.5) * box.h
            x, y = box.cx + u * c - v * s, box.cy + u * s + v * c
            assert out[i, j] == pytest.approx(1.5 * x - 0.25 * y + 3.0, abs=1e-6)


def test_theta_zero_matches_scalar_reference():
    rng = SplitMix64(3)
    data = rng.normal(size=(2, 20, 24))
    fm = FeatureMap(data)
    for _ in range(10):
        cx, cy = rng.uniform(-2, 26), rng.uniform(-2, 22)
        w, h = rng.uniform(1, 15), rng.uniform(1, 15)
        S, r = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        ours = rotated_roi_align(fm, RotatedBox(cx, cy, w, h, 0.0), S, r).data
        ref = _scalar_roi_align(data, cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, S, r)
        assert np.max(np.abs(ours - ref)) <= 1e-9


def _field(x, y):
    return np.sin(0.9 * x) * np.cos(0.6 * y) + 0.2 * x - 0.1 * y


def test_rotated_box_vs_rotated_field_oracle():
    # unit-scale geometry rendered 16 pixels per unit
    k, n = 16, 160
    xs, ys = _grid(n, n)
    X, Y = xs / k, ys / k
    cx, cy, theta = 5.0, 5.0, 0.6
    fm_a = FeatureMap(_field(X, Y)[None])
    # field rotated by -theta about the center, sampled on the same fine grid
    c, s = math.cos(theta), math.sin(theta)
    dx, dy = X - cx, Y - cy
    fm_b = FeatureMap(_field(cx + c * dx - s * dy, cy + s * dx + c * dy)[None])
    a = rotated_roi_align(fm_a, RotatedBox(cx * k, cy * k, 3 * k, 2 * k, theta), 7, 2).data
    b = rotated_roi_align(fm_b, RotatedBox(cx * k, cy * k, 3 * k, 2 * k, 0.0), 7, 2).data
    assert np.max(np.abs(a - b)) <= 2e-3


def test_linearity():
    rng = SplitMix64(11)
    f, g = rng.normal(size=(3, 30, 30)), rng.normal(size=(3, 30, 30))
    box = RotatedBox(14, 16, 10, 6, 2.3)
    lhs = rotated_roi_align(FeatureMap(2.5 * f - 0.75 * g), box).data
    rhs = 2.5 * rotated_roi_align(FeatureMap(f), box).data - 0.75 * rotated_roi_align(FeatureMap(g), box).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-9


def test_out_of_bounds_box_is_zero():
    fm = FeatureMap(np.ones((2, 20, 20)))
    out = rotated_roi_align(fm, RotatedBox(-50, 80, 6, 4, 0.4))
    assert np.all(out.data == 0.0)


def test_invalid_size():
    fm = FeatureMap(np.ones((1, 5, 5)))
    with pytest.raises(InvalidSize):
        rotated_roi_align(fm, RotatedBox(2, 2, 2, 2, 0), 0)


def test_output_shape_and_determinism():
    rng = SplitMix64(1)
    fm = FeatureMap(rng.normal(size=(4, 16, 16)))
    box = RotatedBox(8, 8, 5, 3, 0.2)
    a = rotated_roi_align(fm, box, 7, 2)
    assert a.data.shape == (4, 7, 7)
    assert np.array_equal(a.data, rotated_roi_align(fm, box, 7, 2).data)


def test_feature_map_validation():
    with pytest.raises(ShapeMismatch):
        FeatureMap(np.ones((5, 5)))
    with pytest.raises(ValueError):
        FeatureMap(np.full((1, 2, 2), np.nan))


def test_subtract_and_fuse():
    rng = SplitMix64(21)
    a = PooledFeature(rng.normal(size=(2, 3, 3)))
    b = PooledFeature(rng.normal(size=(2, 3, 3)))
    zeros = PooledFeature(np.zeros((2, 3, 3)))
    ones = PooledFeature(np.ones((2, 3, 3)))
    assert np.all(subtract(a, a).data == 0)
    assert np.all(subtract(ones, zeros).data == 1)
    d = subtract(a, b).data
    for idx in np.ndindex(d.shape):
        assert d[idx] == a.data[idx] - b.data[idx]
    assert np.array_equal(fuse(a, zeros).data, a.data)
    assert np.all(fuse(ones, ones).data == 2.0)
    s = fuse(a, subtract(b, zeros)).data
    for idx in np.ndindex(s.shape):
        assert s[idx] == a.data[idx] + b.data[idx]


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        subtract(PooledFeature(np.zeros((1, 3, 3))), PooledFeature(np.zeros((2, 3, 3))))
    with pytest.raises(ShapeMismatch):
        fuse(PooledFeature(np.zeros((1, 3, 3))), PooledFeature(np.zeros((1, 4, 4))))
