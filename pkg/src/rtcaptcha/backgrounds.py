"""Background library and preprocessing pipeline.

The shipped library is procedural (9 textures for the default set, a
disjoint second set for the fresh-background scenario) but any plain
directory of raster files works.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgio import read_rgb, write_rgb

TARGET = 64


def _grid(size):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    return xs, ys


def _tex_gradient(size, rng, warm):
    xs, ys = _grid(size)
    a = rng.uniform(0.4, 0.9)
    if warm:
        img = np.stack([0.75 + 0.2 * xs, 0.62 + 0.2 * ys * a, 0.5 + 0.1 * xs], axis=-1)
    else:
        img = np.stack([0.5 + 0.15 * ys, 0.62 + 0.2 * xs * a, 0.78 + 0.18 * ys], axis=-1)
    return img


def _tex_stripes(size, rng):
    xs, ys = _grid(size)
    theta = rng.uniform(0.2, 1.2)
    period = rng.uniform(6, 14)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * (xs * np.cos(theta) + ys * np.sin(theta)) * size / period)
    base = rng.uniform(0.55, 0.75, size=3)
    amp = rng.uniform(0.08, 0.16, size=3)
    return base + amp * wave[..., None]


def _tex_blobs(size, rng):
    img = np.full((size, size, 3), rng.uniform(0.6, 0.8, size=3))
    xs, ys = _grid(size)
    for _ in range(6):
        cx, cy = rng.uniform(0, 1, 2)
        r = rng.uniform(0.1, 0.3)
        tint = rng.uniform(-0.15, 0.15, size=3)
        blob = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * r * r))
        img = img + blob[..., None] * tint
    return img


def _tex_speckle(size, rng):
    base = rng.uniform(0.62, 0.8, size=3)
    noise = rng.normal(0, 0.05, size=(size, size, 1))
    return base + ndimage.gaussian_filter(noise, sigma=1.0, axes=(0, 1))


def _tex_rings(size, rng):
    xs, ys = _grid(size)
    cx, cy = rng.uniform(0.3, 0.7, 2)
    rr = np.hypot(xs - cx, ys - cy)
    wave = 0.5 + 0.5 * np.cos(rr * rng.uniform(18, 30))
    base = rng.uniform(0.55, 0.7, size=3)
    return base + 0.12 * wave[..., None]


def _tex_checker(size, rng):
    xs, ys = _grid(size)
    n = rng.integers(4, 8)
    cells = ((np.floor(xs * n) + np.floor(ys * n)) % 2)[..., None]
    c0 = rng.uniform(0.55, 0.7, size=3)
    c1 = c0 + rng.uniform(0.05, 0.15, size=3)
    return c0 + cells * (c1 - c0)


def _tex_clouds(size, rng):
    field = rng.normal(0, 1, size=(size, size, 1))
    soft = ndimage.gaussian_filter(field, sigma=size / 10, axes=(0, 1))
    soft = (soft - soft.min()) / (np.ptp(soft) + 1e-9)
    base = rng.uniform(0.55, 0.7, size=3)
    return base + 0.2 * soft


def _tex_paper(size, rng):
    base = np.full((size, size, 3), rng.uniform(0.72, 0.85))
    fibers = ndimage.gaussian_filter(rng.normal(0, 1, (size, size, 1)), sigma=(0.3, 3.0, 0), axes=(0, 1, 2))
    return base + 0.05 * fibers


def _tex_waves(size, rng):
    xs, ys = _grid(size)
    w = np.sin(xs * rng.uniform(8, 14) + np.sin(ys * 6) * 1.5)
    base = rng.uniform(0.5, 0.62, size=3)
    return base + 0.15 * (0.5 + 0.5 * w)[..., None]


def _tex_gridlines(size, rng):
    xs, ys = _grid(size)
    n = rng.integers(6, 10)
    lx = np.abs(((xs * n) % 1.0) - 0.5) < 0.06
    ly = np.abs(((ys * n) % 1.0) - 0.5) < 0.06
    img = np.full((size, size, 3), rng.uniform(0.7, 0.82, size=3))
    return img - 0.2 * (lx | ly)[..., None]


def _tex_marble(size, rng):
    xs, ys = _grid(size)
    turb = ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), sigma=3)
    veins = 0.5 + 0.5 * np.sin((xs + ys) * 10 + turb * 6)
    base = rng.uniform(0.6, 0.72, size=3)
    return base + 0.16 * veins[..., None]


def _tex_dusk(size, rng):
    xs, ys = _grid(size)
    return np.stack([0.55 + 0.25 * (1 - ys), 0.45 + 0.2 * (1 - ys) * xs, 0.6 + 0.1 * ys], axis=-1)


DEFAULT_SET = {
    "gradient_warm": lambda size, rng: _tex_gradient(size, rng, True),
    "gradient_cool": lambda size, rng: _tex_gradient(size, rng, False),
    "stripes": _tex_stripes,
    "blobs": _tex_blobs,
    "speckle": _tex_speckle,
    "rings": _tex_rings,
    "checker": _tex_checker,
    "clouds": _tex_clouds,
    "paper": _tex_paper,
}

FRESH_SET = {
    "waves": _tex_waves,
    "gridlines": _tex_gridlines,
    "marble": _tex_marble,
    "dusk": _tex_dusk,
}


class BackgroundLibrary:
    """Named source images; sources may be any size, preparation resizes."""

    def __init__(self, images: dict[str, np.ndarray], name: str = "library"):
        if not images:
            raise ValueError("background library is empty")
        self.name = name
        self.images = {k: np.clip(v, 0.0, 1.0).astype(np.float32) for k, v in images.items()}

    def ids(self) -> list[str]:
        return sorted(self.images)

    def get(self, image_id: str) -> np.ndarray:
        if image_id not in self.images:
            raise KeyError(f"unknown background image id {image_id!r}")
        return self.images[image_id]


def builtin_library(which: str = "default", size: int = 96, seed: int = 2024) -> BackgroundLibrary:
    gens = DEFAULT_SET if which == "default" else FRESH_SET if which == "fresh" else None
    if gens is None:
        raise ValueError(f"unknown built-in background set {which!r}")
    images = {}
    for i, (name, gen) in enumerate(sorted(gens.items())):
        rng = np.random.default_rng([seed, i])
        images[name] = np.clip(gen(size, rng), 0.0, 1.0)
    return BackgroundLibrary(images, name=f"builtin-{which}")


def save_library(lib: BackgroundLibrary, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, img in lib.images.items():
        write_rgb(path / f"{name}.png", img)


def load_library(path) -> BackgroundLibrary:
    path = Path(path)
    files = sorted(path.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no raster files in background library {path}")
    return BackgroundLibrary({f.stem: read_rgb(f) for f in files}, name=path.name)


# ---------------------------------------------------------------------------
# preprocessing ops


def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    out = ndimage.rotate(img.astype(np.float64), degrees, axes=(1, 0), reshape=False, order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def blur_image(img: np.ndarray, radius: float) -> np.ndarray:
    out = ndimage.gaussian_filter(img.astype(np.float64), sigma=(radius, radius, 0), mode="mirror")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def erode_image(img: np.ndarray, radius: int) -> np.ndarray:
    size = 2 * int(radius) + 1
    out = ndimage.grey_erosion(img, size=(size, size, 1), mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def add_noise(img: np.ndarray, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    out = img + rng.normal(0.0, amplitude, size=img.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize_image(img: np.ndarray, height: int = TARGET, width: int = TARGET) -> np.ndarray:
    zoom = (height / img.shape[0], width / img.shape[1], 1.0)
    out = ndimage.zoom(img.astype(np.float64), zoom, order=1, mode="nearest", grid_mode=True)
    return np.clip(out, 0.0, 1.0).astype(np.float32)[:height, :width]


class BackgroundSpec:
    """One source image plus an ordered preprocessing op list.

    Ops: ("rotate", degrees) ("blur", radius) ("erode", radius)
    ("noise", amplitude) ("resize",). Output is always TARGETxTARGETx3.
    """

    def __init__(self, source: str, ops: list[tuple] | None = None):
        self.source = source
        self.ops = list(ops or [])

    def to_json(self):
        return {"source": self.source, "ops": [list(op) for op in self.ops]}

    @classmethod
    def from_json(cls, d):
        return cls(d["source"], [tuple(op) for op in d.get("ops", [])])


def prepare_background(spec: BackgroundSpec, library: BackgroundLibrary, rng: np.random.Generator) -> np.ndarray:
    img = library.get(spec.source)
    for op in spec.ops:
        name, *args = op
        if name == "rotate":
            img = rotate_image(img, float(args[0]))
        elif name == "blur":
            img = blur_image(img, float(args[0]))
        elif name == "erode":
            img = erode_image(img, int(args[0]))
        elif name == "noise":
            img = add_noise(img, float(args[0]), rng)
        elif name == "resize":
            img = resize_image(img)
        else:
            raise ValueError(f"unknown background op {name!r}")
    if img.shape[:2] != (TARGET, TARGET):
        img = resize_image(img)
    return np.clip(img, 0.0, 1.0).astype(np.float32)
