"""Image loading/saving (8-bit PNG and binary PGM) and luma/chroma handling.

Pixels are floats in [0, 1]; saving quantizes to 8 bits with rounding.
PNG goes through Pillow. Binary PGM (P5, maxval 255) is read and written
directly so its error cases stay precise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (ImageNotFoundError, ShapeError, TruncatedImageError,
                     UnsupportedImageError)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# BT.601 luma weights and chroma scales
KR, KG, KB = 0.299, 0.587, 0.114
CB_SCALE, CR_SCALE = 0.564, 0.713


@dataclass
class GrayImage:
    pixels: np.ndarray  # (H, W) float64 in [0, 1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class ColorImage:
    pixels: np.ndarray  # (H, W, 3) float64 RGB in [0, 1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def _to_bytes(pixels):
    return np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# -- PGM --------------------------------------------------------------------

def _pgm_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens (skipping comments)."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise TruncatedImageError("PGM header ends early")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def _read_pgm(path, data):
    tokens, offset = _pgm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise UnsupportedImageError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise UnsupportedImageError(f"{path}: PGM maxval {maxval} is not supported (need 255)")
    if width <= 0 or height <= 0:
        raise UnsupportedImageError(f"{path}: PGM has empty dimensions {width}x{height}")
    raster = data[offset:offset + width * height]
    if len(raster) < width * height:
        raise TruncatedImageError(
            f"{path}: PGM payload has {len(raster)} of {width * height} bytes")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage(arr.astype(np.float64) / 255.0)


def _write_pgm(path, pixels):
    arr = _to_bytes(pixels)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


# -- PNG --------------------------------------------------------------------

def _read_png(path, data):
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode not in ("L", "RGB"):
                raise UnsupportedImageError(
                    f"{path}: PNG mode {mode!r} is not supported (need 8-bit gray or RGB)")
            im.load()
            arr = np.asarray(im)
    except UnidentifiedImageError:
        raise TruncatedImageError(f"{path}: PNG stream is cut short") from None
    except OSError as exc:
        if isinstance(exc, UnsupportedImageError):
            raise
        raise TruncatedImageError(f"{path}: {exc}") from None
    pixels = arr.astype(np.float64) / 255.0
    return ColorImage(pixels) if pixels.ndim == 3 else GrayImage(pixels)


def load(path):
    """Load a PNG (8-bit gray or RGB) or binary PGM (P5, maxval 255)."""
    path = Path(path)
    if not path.is_file():
        raise ImageNotFoundError(f"{path}: no such file")
    data = path.read_bytes()
    if data.startswith(PNG_SIGNATURE):
        return _read_png(path, data)
    if data.startswith(b"P5"):
        return _read_pgm(path, data)
    if len(data) < len(PNG_SIGNATURE) and PNG_SIGNATURE.startswith(data) and data:
        raise TruncatedImageError(f"{path}: PNG signature is cut short")
    raise UnsupportedImageError(f"{path}: not a PNG or binary PGM file")


def save(path, image):
    """Write ``image`` (GrayImage, ColorImage or a [0, 1] array) by file extension."""
    pixels = image.pixels if isinstance(image, (GrayImage, ColorImage)) else np.asarray(image)
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pgm":
        if pixels.ndim != 2:
            raise UnsupportedImageError(f"{path}: PGM output holds grayscale only")
        _write_pgm(path, pixels)
    elif ext == ".png":
        if pixels.ndim not in (2, 3) or (pixels.ndim == 3 and pixels.shape[2] != 3):
            raise UnsupportedImageError(f"{path}: cannot write array of shape {pixels.shape}")
        Image.fromarray(_to_bytes(pixels)).save(path, format="PNG")
    else:
        raise UnsupportedImageError(f"{path}: unknown image extension {ext!r}")
    return path


def to_gray(image):
    """Luminance plane of any loaded image, plus chroma planes when it was color."""
    if isinstance(image, ColorImage):
        luma, chroma = split_luma(image)
        return luma.pixels, chroma
    return image.pixels, None


def split_luma(color):
    """RGB -> (Y, (Cb, Cr)) with BT.601 weights, chroma centred on 0.5."""
    px = color.pixels
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    # written relative to R so that R == G == B gives Y == R exactly
    y = r + KG * (g - r) + KB * (b - r)
    cb = CB_SCALE * (b - y) + 0.5
    cr = CR_SCALE * (r - y) + 0.5
    return GrayImage(y), np.stack([cb, cr], axis=-1)


def merge_luma(luma, chroma):
    """Exact algebraic inverse of :func:`split_luma`, clamped to [0, 1]."""
    y = luma.pixels if isinstance(luma, GrayImage) else np.asarray(luma, dtype=np.float64)
    chroma = np.asarray(chroma, dtype=np.float64)
    if chroma.shape != y.shape + (2,):
        raise ShapeError(f"luma {y.shape} and chroma {chroma.shape} dimensions differ")
    b = y + (chroma[..., 0] - 0.5) / CB_SCALE
    r = y + (chroma[..., 1] - 0.5) / CR_SCALE
    g = y + (KR * (y - r) + KB * (y - b)) / KG
    rgb = np.stack([r, g, b], axis=-1)
    return ColorImage(np.clip(np.nan_to_num(rgb, nan=0.0), 0.0, 1.0))


def writable_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"{path}: directory is not writable")
    return path
