"""The 15 preprocessing filters a solver may place in front of its input.

Convolutional kinds use fixed coefficient tables vendored as package data
(matching the reference imaging library's published kernels, applied as
correlation with an unfiltered one-pixel border); rank kinds use 3x3
windows with edge replication. Every filter is total, deterministic,
shape- and range-preserving.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .models import predict

RANK_KINDS = ("MinFilter", "MaxFilter", "MedianFilter", "ModeFilter")


def _load_kernel_tables() -> dict:
    with resources.files("rtcaptcha").joinpath("data/filter_kernels.json").open() as f:
        return json.load(f)


_TABLES = None


def kernel_tables() -> dict:
    global _TABLES
    if _TABLES is None:
        _TABLES = _load_kernel_tables()
    return _TABLES


def filter_names() -> list[str]:
    return list(kernel_tables()["order"])


def normalize_name(name: str) -> str:
    cleaned = name.replace(" ", "_")
    for known in filter_names():
        if cleaned.lower() == known.lower():
            return known
    raise ValueError(f"unknown filter {name!r}; choose from {filter_names()}")


def _correlate_fixed(img: np.ndarray, kernel: np.ndarray, scale: float, offset: float) -> np.ndarray:
    """Correlation with the coefficient table; the border the window cannot
    cover keeps the source pixels."""
    k = kernel.shape[0]
    m = k // 2
    h, w, _ = img.shape
    out = img.copy()
    acc = np.zeros((h - 2 * m, w - 2 * m, img.shape[2]), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            acc += kernel[i, j] * img[i : i + h - 2 * m, j : j + w - 2 * m, :]
    out[m : h - m, m : w - m, :] = acc / scale + offset
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _rank_windows(img: np.ndarray, size: int) -> np.ndarray:
    m = size // 2
    padded = np.pad(img, ((m, m), (m, m), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (size, size), axis=(0, 1))
    h, w, c = img.shape
    return win.reshape(h, w, c, size * size)


def _mode_filter(img: np.ndarray, size: int) -> np.ndarray:
    # counting needs discrete levels; quantise to the 8-bit grid
    win = np.sort(np.round(_rank_windows(img, size) * 255.0), axis=-1)
    n = win.shape[-1]
    counts = np.zeros(win.shape, dtype=np.int16)
    for j in range(n):
        counts += (win == win[..., j : j + 1]).astype(np.int16)
    best = counts.argmax(axis=-1)  # first max = smallest value on count ties
    best_count = np.take_along_axis(counts, best[..., None], axis=-1)[..., 0]
    best_value = np.take_along_axis(win, best[..., None], axis=-1)[..., 0] / 255.0
    return np.where(best_count > 2, best_value, img).astype(np.float32)


def apply_filter(image: np.ndarray, kind: str | None, window: int = 3) -> np.ndarray:
    """Run one named filter; kind None passes the image through."""
    if kind is None or kind == "None":
        return image
    kind = normalize_name(kind)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {image.shape}")
    if kind in RANK_KINDS:
        if kind == "MinFilter":
            return _rank_windows(image, window).min(axis=-1).astype(np.float32)
        if kind == "MaxFilter":
            return _rank_windows(image, window).max(axis=-1).astype(np.float32)
        if kind == "MedianFilter":
            return np.median(_rank_windows(image, window), axis=-1).astype(np.float32)
        return _mode_filter(image, window)
    table = kernel_tables()["kernels"][kind]
    kernel = np.array(table["kernel"], dtype=np.float64)
    return _correlate_fixed(image.astype(np.float64), kernel, table["scale"], table["offset"] / 255.0)


def defended_predict(model, image: np.ndarray, kind: str | None):
    """predict() behind a preprocessing filter; kind None bypasses."""
    return predict(model, apply_filter(image, kind))
