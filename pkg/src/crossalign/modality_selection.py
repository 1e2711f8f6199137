"""Per-object annotation quality scoring and reference modality choice.

Each modality's box is extended to take in the whole object, the crop is
binarized with Otsu's threshold, and the box is scored by how much of the
white object it captures and how much of the box is white::

    S = 0.5 * n / n_object + 0.5 * n / n_bbox

where ``n`` counts white pixels inside the original box, ``n_object`` white
pixels in the extended crop and ``n_bbox`` all pixels of the original box.
Pixels belong to a box when their centers ``(j + 0.5, i + 0.5)`` fall inside.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import RotatedBox, corners, points_in_box
from .pnm import to_luma

DEFAULT_EXTEND_FACTOR = 1.25


class EmptyCrop(ValueError):
    pass


class Modality(enum.Enum):
    RGB = "rgb"
    IR = "ir"


@dataclass
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 3:
            px = to_luma(px)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"gray image must be a nonempty (H, W) array, got shape {px.shape}")
        self.pixels = np.clip(px, 0, 255).astype(np.uint8)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class MsScore:
    n: int
    n_object: int
    n_bbox: int
    score: float


def extend_box(box: RotatedBox, factor: float = DEFAULT_EXTEND_FACTOR) -> RotatedBox:
    if factor < 1.0:
        raise ValueError("extend factor must be >= 1")
    return RotatedBox(box.cx, box.cy, box.w * factor, box.h * factor, box.theta)


def otsu_threshold(values: np.ndarray) -> int | None:
    """Otsu's threshold over a 256-bin histogram.

    Returns the smallest ``t`` maximizing the between-class variance of the
    split ``{v <= t}`` / ``{v > t}``, or ``None`` if all values are equal.
    """
    hist = np.bincount(np.asarray(values, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0 or np.count_nonzero(hist) < 2:
        return None
    p = hist / total
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(256))
    mu_t = mu[-1]
    denom = omega * (1.0 - omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = np.where(denom > 1e-15, (mu_t * omega - mu) ** 2 / denom, -1.0)
    return int(np.argmax(sigma_b))


def _binary_mask(values: np.ndarray, invert: bool) -> np.ndarray:
    t = otsu_threshold(values)
    if t is None:
        return np.zeros(values.shape, dtype=bool)
    return values <= t if invert else values > t


def binarize_otsu(img: GrayImage, invert: bool = False) -> GrayImage:
    """Binarize to {0, 255}; constant images map to all zeros."""
    mask = _binary_mask(img.pixels, invert)
    return GrayImage(np.where(mask, 255, 0).astype(np.uint8))


def _pixel_window(img: GrayImage, box: RotatedBox):
    pts = corners(box)
    x0 = max(0, int(math.floor(pts[:, 0].min())) - 1)
    x1 = min(img.width, int(math.ceil(pts[:, 0].max())) + 1)
    y0 = max(0, int(math.floor(pts[:, 1].min())) - 1)
    y1 = min(img.height, int(math.ceil(pts[:, 1].max())) + 1)
    return x0, x1, y0, y1


def ms_score(
    img: GrayImage,
    box: RotatedBox,
    extend_factor: float = DEFAULT_EXTEND_FACTOR,
    invert: bool = False,
) -> MsScore:
    """Score one annotation box against its image.

    ``invert`` flips polarity for scenes where objects are darker than the
    background.
    """
    ext = extend_box(box, extend_factor)
    x0, x1, y0, y1 = _pixel_window(img, ext)
    if x0 >= x1 or y0 >= y1:
        raise EmptyCrop(f"extended box {ext} misses the {img.height}x{img.width} image")
    ys, xs = np.mgrid[y0:y1, x0:x1]
    cx, cy = xs + 0.5, ys + 0.5
    in_ext = points_in_box(ext, cx, cy)
    if not in_ext.any():
        raise EmptyCrop(f"extended box {ext} contains no pixel centers of the image")
    in_box = points_in_box(box, cx, cy) & in_ext
    crop = img.pixels[y0:y1, x0:x1][in_ext]
    white = _binary_mask(crop, invert)
    n = int(np.count_nonzero(white & in_box[in_ext]))
    n_object = int(np.count_nonzero(white))
    n_bbox = int(np.count_nonzero(in_box))
    if n_object == 0 or n_bbox == 0:
        return MsScore(n, n_object, n_bbox, 0.0)
    return MsScore(n, n_object, n_bbox, 0.5 * n / n_object + 0.5 * n / n_bbox)


def select_reference(
    rgb_img: GrayImage,
    ir_img: GrayImage,
    b_rgb: RotatedBox,
    b_ir: RotatedBox,
    extend_factor: float = DEFAULT_EXTEND_FACTOR,
    invert: bool = False,
) -> tuple[Modality, MsScore, MsScore]:
    """Pick the modality whose box scores higher; exact ties go to IR."""
    s_rgb = ms_score(rgb_img, b_rgb, extend_factor, invert)
    s_ir = ms_score(ir_img, b_ir, extend_factor, invert)
    choice = Modality.RGB if s_rgb.score > s_ir.score else Modality.IR
    return choice, s_rgb, s_ir
