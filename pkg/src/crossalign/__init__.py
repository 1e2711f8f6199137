"""Cross-modal (RGB/IR) alignment of weakly misaligned rotated-box annotations."""

__version__ = "0.1.0"

from .deviation import Deviation, RotationMode, decode, encode
from .geometry import RotatedBox, corners, rotated_iou

__all__ = ["Deviation", "RotatedBox", "RotationMode", "corners", "decode", "encode", "rotated_iou"]
