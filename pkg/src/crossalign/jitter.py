"""Gaussian jitter of sensed proposals in position, size and angle.

Sampling uses :class:`crossalign.rng.SplitMix64` (Box-Muller normals), so a
given seed yields the same jitter in every run and on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .alignment_head import rejitter
from .geometry import RotatedBox
from .rng import SplitMix64


@dataclass(frozen=True)
class JitterConfig:
    sigma_x: float = 0.05      # fraction of w
    sigma_y: float = 0.05      # fraction of h
    sigma_w: float = 0.05      # log scale
    sigma_h: float = 0.05      # log scale
    sigma_theta: float = 0.05  # radians
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_x", "sigma_y", "sigma_w", "sigma_h", "sigma_theta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def sigmas(self) -> tuple[float, float, float, float, float]:
        return (self.sigma_x, self.sigma_y, self.sigma_w, self.sigma_h, self.sigma_theta)


def jitter_box(box: RotatedBox, cfg: JitterConfig, rng: SplitMix64) -> RotatedBox:
    """Perturb ``box`` with one draw of five standard normals from ``rng``.

    Center offsets scale with the box size and size jitter is multiplicative,
    so the result always has positive sides.
    """
    jx, jy, jw, jh, jt = rng.normal(size=5)
    return RotatedBox(
        box.cx + jx * cfg.sigma_x * box.w,
        box.cy + jy * cfg.sigma_y * box.h,
        box.w * math.exp(jw * cfg.sigma_w),
        box.h * math.exp(jh * cfg.sigma_h),
        box.theta + jt * cfg.sigma_theta,
    )


def jitter_dataset(samples, cfg: JitterConfig, copies: int = 1, repool=None):
    """Replace each positive sample by ``copies`` jittered variants.

    Every positive must carry its proposal and the annotated sensed box (see
    :class:`crossalign.alignment_head.ProposalSample`).  The jittered box
    becomes the new sensed proposal and the target is re-encoded against it,
    so decoding the new target from the jittered proposal still lands on the
    annotated sensed box.  ``repool(sample, proposal)`` re-pools the sensed
    feature on the jittered proposal; it defaults to the sample's own hook.
    Negatives pass through unchanged.
    """
    if copies < 1:
        raise ValueError("copies must be >= 1")
    rng = SplitMix64(cfg.seed)
    out = []
    for s in samples:
        if not s.positive:
            out.append(s)
            continue
        for _ in range(copies):
            out.append(rejitter(s, jitter_box(s.sensed_proposal, cfg, rng), repool))
    return out
