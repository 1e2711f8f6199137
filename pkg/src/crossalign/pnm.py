"""Minimal Netpbm reader/writer for 8-bit grayscale (P2/P5) and color (P3/P6)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PnmError(ValueError):
    pass


def _tokens(raw: bytes):
    """Yield (token, end_offset) pairs from a Netpbm header, skipping comments."""
    i, n = 0, len(raw)
    while i < n:
        ch = raw[i:i + 1]
        if ch == b"#":
            while i < n and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and not raw[j:j + 1].isspace() and raw[j:j + 1] != b"#":
                j += 1
            yield raw[i:j], j
            i = j


def read_pnm(path) -> np.ndarray:
    """Read a P2/P3/P5/P6 file as uint8, shape (H, W) or (H, W, 3)."""
    raw = Path(path).read_bytes()
    toks = _tokens(raw)
    try:
        magic, _ = next(toks)
        magic = magic.decode("ascii")
        if magic not in ("P2", "P3", "P5", "P6"):
            raise PnmError(f"{path}: unsupported magic {magic!r}")
        width = int(next(toks)[0])
        height = int(next(toks)[0])
        maxval_tok, end = next(toks)
        maxval = int(maxval_tok)
    except (StopIteration, ValueError) as exc:
        raise PnmError(f"{path}: malformed header") from exc
    if not 0 < maxval < 256:
        raise PnmError(f"{path}: only 8-bit maxval supported, got {maxval}")
    depth = 3 if magic in ("P3", "P6") else 1
    count = width * height * depth
    if magic in ("P5", "P6"):
        body = raw[end + 1:end + 1 + count]
        if len(body) != count:
            raise PnmError(f"{path}: expected {count} bytes of pixel data, got {len(body)}")
        arr = np.frombuffer(body, dtype=np.uint8).copy()
    else:
        vals = [int(t) for t, _ in toks]
        if len(vals) < count:
            raise PnmError(f"{path}: expected {count} samples, got {len(vals)}")
        arr = np.array(vals[:count], dtype=np.int64)
        if arr.max(initial=0) > maxval:
            raise PnmError(f"{path}: sample exceeds maxval")
        arr = arr.astype(np.uint8)
    if maxval != 255:
        arr = np.round(arr.astype(float) * 255.0 / maxval).astype(np.uint8)
    shape = (height, width, 3) if depth == 3 else (height, width)
    return arr.reshape(shape)


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a binary (P5) 8-bit grayscale image."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def write_ppm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma, rounded to uint8."""
    rgb = np.asarray(rgb, dtype=np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.round(y), 0, 255).astype(np.uint8)
