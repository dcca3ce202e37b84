"""Executable bytes to grayscale images, and images to feature vectors.

Feature vectors are plain 1-D ``float64`` numpy arrays with values in [0, 1].
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

KB = 1024

# (lower bound in kB, width); a size falls in the last bucket whose bound it reaches.
WIDTH_BUCKETS = (
    (0, 32),
    (10, 64),
    (30, 128),
    (60, 256),
    (100, 384),
    (200, 512),
    (500, 768),
    (1000, 1024),
)

RESIZE_METHODS = ("bilinear", "nearest")


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image stored as a read-only ``(height, width)`` array."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2-D grid, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None


def width_for_size(byte_count: int) -> int:
    """Image width for a file of ``byte_count`` bytes.

    Buckets are lower-inclusive and upper-exclusive with 1 kB = 1024 bytes,
    so a file of exactly 10 kB gets width 64.
    """
    if byte_count < 0:
        raise ValueError("byte_count must be non-negative")
    width = WIDTH_BUCKETS[0][1]
    for lower_kb, w in WIDTH_BUCKETS:
        if byte_count >= lower_kb * KB:
            width = w
        else:
            break
    return width


def bytes_to_image(data: bytes, width: int | None = None) -> GrayImage:
    """Lay ``data`` out row-major as an image; the last row is zero padded.

    ``width`` overrides the size-based table lookup.
    """
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    if buf.size == 0:
        raise ValueError("empty file")
    if width is None:
        width = width_for_size(buf.size)
    if width < 1:
        raise ValueError("width must be positive")
    height = math.ceil(buf.size / width)
    grid = np.zeros(width * height, dtype=np.uint8)
    grid[: buf.size] = buf
    return GrayImage(grid.reshape(height, width))


def file_to_image(path, width: int | None = None) -> GrayImage:
    return bytes_to_image(Path(path).read_bytes(), width=width)


def _axis_weights(n_src: int, n_dst: int):
    # Corner-aligned sample positions: first and last output pixels land on the
    # first and last source pixels.
    if n_dst == 1:
        pos = np.array([(n_src - 1) / 2.0])
    else:
        pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    lo = np.clip(np.floor(pos).astype(np.intp), 0, n_src - 1)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = pos - lo
    return lo, hi, frac


def resize(image: GrayImage, target_width: int, target_height: int, method: str = "bilinear") -> GrayImage:
    """Resample ``image`` to ``target_width`` x ``target_height``."""
    if target_width < 1 or target_height < 1:
        raise ValueError(f"target dimensions must be positive, got {target_width}x{target_height}")
    if method not in RESIZE_METHODS:
        raise ValueError(f"unknown resize method {method!r}; expected one of {RESIZE_METHODS}")
    if (target_height, target_width) == image.shape:
        return image

    src = image.pixels.astype(np.float64)
    r_lo, r_hi, r_frac = _axis_weights(image.height, target_height)
    c_lo, c_hi, c_frac = _axis_weights(image.width, target_width)

    if method == "nearest":
        rows = np.where(r_frac < 0.5, r_lo, r_hi)
        cols = np.where(c_frac < 0.5, c_lo, c_hi)
        return GrayImage(image.pixels[np.ix_(rows, cols)])

    tmp = src[r_lo] * (1.0 - r_frac)[:, None] + src[r_hi] * r_frac[:, None]
    out = tmp[:, c_lo] * (1.0 - c_frac)[None, :] + tmp[:, c_hi] * c_frac[None, :]
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def flatten_2d(image: GrayImage) -> np.ndarray:
    """Row-major pixels scaled to [0, 1]."""
    return image.pixels.reshape(-1).astype(np.float64) / 255.0


def resample_1d(vector, target_length: int) -> np.ndarray:
    """Shrink ``vector`` to ``target_length`` elements by block averaging.

    The input is zero padded at the end to the next multiple of
    ``target_length`` and then split into that many equal, consecutive,
    non-overlapping blocks; each output element is one block mean.
    """
    if target_length < 1:
        raise ValueError("target_length must be >= 1")
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return np.zeros(target_length)
    block = -(-v.size // target_length)
    padded = np.zeros(block * target_length)
    padded[: v.size] = v
    return padded.reshape(target_length, block).mean(axis=1)


def read_image(path) -> GrayImage:
    """Load a PNG/PGM (or anything Pillow reads) as 8-bit grayscale."""
    with Image.open(path) as im:
        im.load()
        if im.mode != "L":
            im = im.convert("L")
        return GrayImage(np.array(im, dtype=np.uint8))


def encode_image(image: GrayImage, fmt: str = "png") -> bytes:
    """Encode as ``"png"`` or ``"pgm"`` (binary P5) bytes."""
    fmt = fmt.lower()
    if fmt not in ("png", "pgm"):
        raise ValueError(f"unsupported image format {fmt!r}")
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image.pixels)).save(buf, format="PPM" if fmt == "pgm" else "PNG")
    return buf.getvalue()


def write_image(image: GrayImage, path) -> None:
    """Write ``image`` as PNG, or binary PGM (P5) for ``.pgm`` paths."""
    path = Path(path)
    fmt = "pgm" if path.suffix.lower() in (".pgm", ".pnm") else "png"
    path.write_bytes(encode_image(image, fmt))
