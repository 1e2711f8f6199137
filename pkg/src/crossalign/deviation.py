"""Reference-to-sensed box offset encoding.

A :class:`Deviation` expresses a sensed box relative to a reference box:
center offset rotated into the reference frame and normalized by the
reference size, log size ratios, and the angle difference in turns.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, RotatedBox


class SingularEncoding(ValueError):
    """The non-orthogonal ``PAPER_EXACT`` transform is singular at this angle."""


class RotationMode(enum.Enum):
    STANDARD = "standard"
    # literal printed form: +sin in both rows (not a rotation)
    PAPER_EXACT = "paper_exact"


SINGULAR_TOL = 1e-6


@dataclass(frozen=True)
class Deviation:
    tx: float
    ty: float
    sw: float
    sh: float
    rtheta: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite deviation: {tuple(vals)}")
        if not 0.0 <= self.rtheta < 1.0:
            raise ValueError(f"rtheta must lie in [0, 1), got {self.rtheta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.sw, self.sh, self.rtheta], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Deviation":
        tx, ty, sw, sh, r = (float(v) for v in arr)
        return cls(tx, ty, sw, sh, r)

    def to_dict(self) -> dict:
        return {"tx": self.tx, "ty": self.ty, "sw": self.sw, "sh": self.sh, "rtheta": self.rtheta}

    @classmethod
    def from_dict(cls, d: dict) -> "Deviation":
        return cls(d["tx"], d["ty"], d["sw"], d["sh"], d["rtheta"])


ZERO = Deviation(0.0, 0.0, 0.0, 0.0, 0.0)


def wrap_turns(r: float) -> float:
    """Fold a turn count into [0, 1)."""
    t = r - math.floor(r)
    return 0.0 if t >= 1.0 else t


def _check_singular(theta: float) -> None:
    # det of [[c, s], [s, c]] is cos(2 theta); zero at pi/4 + k pi/2
    off = math.fmod(theta - math.pi / 4, math.pi / 2)
    if off < 0:
        off += math.pi / 2
    if min(off, math.pi / 2 - off) < SINGULAR_TOL:
        raise SingularEncoding(f"reference angle {theta!r} is within {SINGULAR_TOL} of pi/4 + k*pi/2")


def _frame(theta: float, mode: RotationMode) -> tuple[float, float, float, float]:
    """Rows of the 2x2 matrix mapping world offsets to reference-frame offsets."""
    c, s = math.cos(theta), math.sin(theta)
    if mode is RotationMode.STANDARD:
        return c, s, -s, c
    _check_singular(theta)
    return c, s, s, c


def encode(reference: RotatedBox, sensed: RotatedBox, mode: RotationMode = RotationMode.STANDARD) -> Deviation:
    a, b, c, d = _frame(reference.theta, mode)
    dx, dy = sensed.cx - reference.cx, sensed.cy - reference.cy
    tx = (a * dx + b * dy) / reference.w
    ty = (c * dx + d * dy) / reference.h
    sw = math.log(sensed.w / reference.w)
    sh = math.log(sensed.h / reference.h)
    r = wrap_turns(math.fmod(sensed.theta - reference.theta, TWO_PI) / TWO_PI)
    return Deviation(tx, ty, sw, sh, r)


def decode(reference: RotatedBox, dev: Deviation, mode: RotationMode = RotationMode.STANDARD) -> RotatedBox:
    """Inverse of :func:`encode`."""
    a, b, c, d = _frame(reference.theta, mode)
    u, v = dev.tx * reference.w, dev.ty * reference.h
    det = a * d - b * c
    dx = (d * u - b * v) / det
    dy = (a * v - c * u) / det
    return RotatedBox(
        reference.cx + dx,
        reference.cy + dy,
        reference.w * math.exp(dev.sw),
        reference.h * math.exp(dev.sh),
        reference.theta + dev.rtheta * TWO_PI,
    )


def smooth_l1(x, beta: float = 1.0):
    """0.5 x^2 / beta inside |x| < beta, |x| - 0.5 beta outside."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    ax = np.abs(x)
    out = np.where(ax < beta, 0.5 * ax * ax / beta, ax - 0.5 * beta)
    return float(out) if np.ndim(out) == 0 else out


def smooth_l1_grad(x, beta: float = 1.0):
    out = np.where(np.abs(x) < beta, np.asarray(x, dtype=float) / beta, np.sign(x))
    return float(out) if np.ndim(out) == 0 else out
