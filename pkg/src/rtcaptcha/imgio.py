"""Lossless 8-bit raster IO and float<->byte conversions.

Images everywhere else in the package are float arrays in [0, 1]; files on
disk are 8-bit PNG.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image as _PILImage


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / 255.0


def write_rgb(path, img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {img.shape}")
    _PILImage.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def read_rgb(path) -> np.ndarray:
    with _PILImage.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def write_gray(path, img: np.ndarray) -> None:
    if img.ndim != 2:
        raise ValueError(f"expected HxW image, got {img.shape}")
    _PILImage.fromarray(to_uint8(img), mode="L").save(path, format="PNG")


def read_gray(path) -> np.ndarray:
    with _PILImage.open(path) as im:
        return from_uint8(np.asarray(im.convert("L")))


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    _PILImage.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_base64(img: np.ndarray) -> str:
    return base64.b64encode(png_bytes(img)).decode("ascii")


def luma(img: np.ndarray) -> np.ndarray:
    """Rec. 601 grayscale."""
    return img @ np.array([0.299, 0.587, 0.114], dtype=img.dtype)
