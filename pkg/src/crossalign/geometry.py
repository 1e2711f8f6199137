"""Rotated rectangle algebra.

Angles are measured counter-clockwise from the +x axis, in radians, and the
width ``w`` lies along the ``theta`` direction.  ``theta`` is kept in
[0, 2*pi) so a box and its half-turn are distinct parameterizations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
MIN_SIDE = 1e-6


class InvalidBox(ValueError):
    pass


def normalize_angle(theta: float) -> float:
    """Map an angle to [0, 2*pi); idempotent."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    if t >= TWO_PI:
        t = 0.0
    return t


@dataclass(frozen=True)
class RotatedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBox(f"non-finite box field: {vals}")
        if self.w < MIN_SIDE or self.h < MIN_SIDE:
            raise InvalidBox(f"box sides must be >= {MIN_SIDE}, got w={self.w}, h={self.h}")
        for name in ("cx", "cy", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h, self.theta)

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h, "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "RotatedBox":
        return cls(d["cx"], d["cy"], d["w"], d["h"], d.get("theta", 0.0))

    def translated(self, dx: float, dy: float) -> "RotatedBox":
        return RotatedBox(self.cx + dx, self.cy + dy, self.w, self.h, self.theta)


def corners(box: RotatedBox) -> np.ndarray:
    """Corner array of shape (4, 2), counter-clockwise.

    Vertex 0 is the local corner (+w/2, +h/2) rotated by theta.
    """
    c, s = math.cos(box.theta), math.sin(box.theta)
    hw, hh = 0.5 * box.w, 0.5 * box.h
    local = ((hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh))
    return np.array([(box.cx + u * c - v * s, box.cy + u * s + v * c) for u, v in local])


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise vertices)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def clip_convex(subject, clip) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    cp1 = clip[-1]
    for cp2 in clip:
        if not output:
            break
        ex, ey = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def side(p):
            return ex * (p[1] - cp1[1]) - ey * (p[0] - cp1[0])

        inputs, output = output, []
        s = inputs[-1]
        ds = side(s)
        for e in inputs:
            de = side(e)
            if de >= 0.0:
                if ds < 0.0:
                    output.append(_cross_point(s, e, ds, de))
                output.append(e)
            elif ds >= 0.0:
                output.append(_cross_point(s, e, ds, de))
            s, ds = e, de
        cp1 = cp2
    return output


def _cross_point(s, e, ds, de):
    t = ds / (ds - de)
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


def intersection_area(a: RotatedBox, b: RotatedBox) -> float:
    poly = clip_convex(corners(a), corners(b))
    return max(0.0, polygon_area(poly))


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Exact IoU of two rotated boxes via convex polygon clipping."""
    # canonical argument order makes the result bitwise symmetric
    if b.as_tuple() < a.as_tuple():
        a, b = b, a
    d2 = (a.cx - b.cx) ** 2 + (a.cy - b.cy) ** 2
    ra2 = 0.25 * (a.w * a.w + a.h * a.h)
    rb2 = 0.25 * (b.w * b.w + b.h * b.h)
    if d2 > ra2 + rb2 + 2.0 * math.sqrt(ra2 * rb2):
        return 0.0
    inter = intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def points_in_box(box: RotatedBox, x, y) -> np.ndarray:
    """Boolean mask of points (x, y) inside or on the boundary of ``box``."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = np.asarray(x, dtype=float) - box.cx
    dy = np.asarray(y, dtype=float) - box.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= 0.5 * box.w) & (np.abs(v) <= 0.5 * box.h)


def _row_spans(box: RotatedBox, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """x-interval [lo, hi] covered by ``box`` on each horizontal line y."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    dy = ys - box.cy
    lo = np.full(ys.shape, -np.inf)
    hi = np.full(ys.shape, np.inf)
    # |dx*c + dy*s| <= w/2 and |-dx*s + dy*c| <= h/2, each linear in dx
    for coef, offs, half in ((c, dy * s, 0.5 * box.w), (-s, dy * c, 0.5 * box.h)):
        if abs(coef) < 1e-15:
            bad = np.abs(offs) > half
            lo[bad], hi[bad] = np.inf, -np.inf
            continue
        a = (-half - offs) / coef
        b = (half - offs) / coef
        lo = np.maximum(lo, np.minimum(a, b))
        hi = np.minimum(hi, np.maximum(a, b))
    return lo + box.cx, hi + box.cx


def iou_raster_oracle(a: RotatedBox, b: RotatedBox, grid: int = 1024) -> float:
    """Supersampled IoU estimate on a ``grid`` x ``grid`` lattice.

    Sample points are the cell centers of a regular lattice over the union
    bounding box.  Each box covers a contiguous run of samples per row, so
    counts are taken per scanline instead of testing every point.
    """
    if grid < 256:
        raise ValueError("grid must be >= 256")
    ca, cb = corners(a), corners(b)
    pts = np.vstack([ca, cb])
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    sx, sy = (x1 - x0) / grid, (y1 - y0) / grid
    ys = y0 + (np.arange(grid) + 0.5) * sy

    def count(lo, hi):
        # number of k in [0, grid) with lo <= x0 + (k + 0.5) sx <= hi
        kmin = np.ceil((lo - x0) / sx - 0.5)
        kmax = np.floor((hi - x0) / sx - 0.5)
        kmin = np.clip(kmin, 0, grid)
        kmax = np.clip(kmax, -1, grid - 1)
        return np.maximum(kmax - kmin + 1, 0).sum()

    la, ha = _row_spans(a, ys)
    lb, hb = _row_spans(b, ys)
    na = count(la, ha)
    nb = count(lb, hb)
    ni = count(np.maximum(la, lb), np.minimum(ha, hb))
    union = na + nb - ni
    return float(ni / union) if union > 0 else 0.0


def iou_raster_bruteforce(a: RotatedBox, b: RotatedBox, grid: int = 256) -> float:
    """Point-by-point version of :func:`iou_raster_oracle` (slow, for cross-checks)."""
    pts = np.vstack([corners(a), corners(b)])
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    xs = x0 + (np.arange(grid) + 0.5) * (x1 - x0) / grid
    ys = y0 + (np.arange(grid) + 0.5) * (y1 - y0) / grid
    X, Y = np.meshgrid(xs, ys)
    ma, mb = points_in_box(a, X, Y), points_in_box(b, X, Y)
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union if union else 0.0
