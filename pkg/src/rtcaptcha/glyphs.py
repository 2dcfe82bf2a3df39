"""Glyph sources: a built-in procedural stroke font plus bitmap atlas IO.

The alphabet is the 55-symbol set of digits and letters with the seven
human-confusable symbols (0 C c O o S s) removed. Glyphs are opacity masks
normalised to a common 64x64 tile box.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .imgio import read_gray, write_gray

ALPHABET = "123456789" + "ABDEFGHIJKLMNPQRTUVWXYZ" + "abdefghijklmnpqrtuvwxyz"
CLASS_COUNT = 55
TILE = 64

FONT_NAMES = ("regular", "bold", "italic", "bold_italic", "thin", "condensed", "wide")

assert len(ALPHABET) == CLASS_COUNT

_T, _B, _X = 0.08, 0.92, 0.40  # cap top, baseline, x-height top


def char_to_class(ch: str) -> int:
    idx = ALPHABET.find(ch)
    if idx < 0:
        raise ValueError(f"character {ch!r} not in the 55-symbol alphabet")
    return idx


def class_to_char(cls: int) -> str:
    return ALPHABET[cls]


def _arc(cx, cy, rx, ry, deg0, deg1, n=14):
    """Elliptic arc polyline; angles in degrees, 0 = east, 90 = visually up."""
    ts = np.linspace(math.radians(deg0), math.radians(deg1), n)
    return [(cx + rx * math.cos(t), cy - ry * math.sin(t)) for t in ts]


def _strokes() -> dict[str, list[list[tuple[float, float]]]]:
    T, B, X = _T, _B, _X
    a = _arc
    s: dict[str, list] = {}
    # digits
    s["1"] = [[(0.32, 0.24), (0.5, T), (0.5, B)], [(0.3, B), (0.7, B)]]
    s["2"] = [a(0.5, 0.3, 0.28, 0.2, 160, 10) + [(0.22, B), (0.8, B)]]
    s["3"] = [a(0.5, 0.29, 0.26, 0.2, 150, -80), a(0.5, 0.7, 0.28, 0.21, 80, -150)]
    s["4"] = [[(0.62, T), (0.18, 0.62), (0.85, 0.62)], [(0.62, 0.3), (0.62, B)]]
    s["5"] = [[(0.75, T), (0.26, T), (0.24, 0.46)] + a(0.48, 0.66, 0.28, 0.25, 115, -125)]
    s["6"] = [a(0.58, 0.2, 0.34, 0.26, 65, 180) + [(0.24, 0.45), (0.24, 0.68)], a(0.5, 0.68, 0.26, 0.23, 0, 360)]
    s["7"] = [[(0.2, T), (0.8, T), (0.42, B)]]
    s["8"] = [a(0.5, 0.29, 0.23, 0.2, 0, 360), a(0.5, 0.71, 0.27, 0.21, 0, 360)]
    s["9"] = [a(0.5, 0.32, 0.25, 0.23, 0, 360), [(0.75, 0.34), (0.7, 0.7), (0.5, B), (0.3, 0.88)]]
    # uppercase
    s["A"] = [[(0.18, B), (0.5, T), (0.82, B)], [(0.31, 0.62), (0.69, 0.62)]]
    s["B"] = [
        [(0.22, T), (0.22, B)],
        [(0.22, T), (0.54, T)] + a(0.54, 0.29, 0.22, 0.21, 90, -90) + [(0.54, 0.5), (0.22, 0.5)],
        [(0.22, 0.5), (0.57, 0.5)] + a(0.57, 0.71, 0.24, 0.21, 90, -90) + [(0.57, B), (0.22, B)],
    ]
    s["D"] = [[(0.22, T), (0.22, B)], [(0.22, T), (0.48, T)] + a(0.48, 0.5, 0.33, 0.42, 90, -90) + [(0.48, B), (0.22, B)]]
    s["E"] = [[(0.78, T), (0.25, T), (0.25, B), (0.78, B)], [(0.25, 0.5), (0.68, 0.5)]]
    s["F"] = [[(0.78, T), (0.25, T), (0.25, B)], [(0.25, 0.5), (0.66, 0.5)]]
    s["G"] = [a(0.5, 0.5, 0.31, 0.42, 55, 325), [(0.52, 0.6), (0.81, 0.6), (0.81, 0.72)]]
    s["H"] = [[(0.2, T), (0.2, B)], [(0.8, T), (0.8, B)], [(0.2, 0.5), (0.8, 0.5)]]
    s["I"] = [[(0.5, T), (0.5, B)], [(0.3, T), (0.7, T)], [(0.3, B), (0.7, B)]]
    s["J"] = [[(0.42, T), (0.78, T)], [(0.62, T), (0.62, 0.74)] + a(0.44, 0.74, 0.18, 0.16, 0, -180)]
    s["K"] = [[(0.22, T), (0.22, B)], [(0.78, T), (0.22, 0.56)], [(0.42, 0.43), (0.8, B)]]
    s["L"] = [[(0.25, T), (0.25, B), (0.78, B)]]
    s["M"] = [[(0.14, B), (0.14, T), (0.5, 0.62), (0.86, T), (0.86, B)]]
    s["N"] = [[(0.2, B), (0.2, T), (0.8, B), (0.8, T)]]
    s["P"] = [[(0.22, T), (0.22, B)], [(0.22, T), (0.54, T)] + a(0.54, 0.3, 0.24, 0.22, 90, -90) + [(0.54, 0.52), (0.22, 0.52)]]
    s["Q"] = [a(0.5, 0.5, 0.3, 0.42, 0, 360), [(0.58, 0.66), (0.84, 0.95)]]
    s["R"] = [
        [(0.22, T), (0.22, B)],
        [(0.22, T), (0.54, T)] + a(0.54, 0.3, 0.24, 0.22, 90, -90) + [(0.54, 0.52), (0.22, 0.52)],
        [(0.42, 0.52), (0.8, B)],
    ]
    s["T"] = [[(0.18, T), (0.82, T)], [(0.5, T), (0.5, B)]]
    s["U"] = [[(0.2, T), (0.2, 0.66)] + a(0.5, 0.66, 0.3, 0.24, 180, 360) + [(0.8, 0.66), (0.8, T)]]
    s["V"] = [[(0.18, T), (0.5, B), (0.82, T)]]
    s["W"] = [[(0.1, T), (0.3, B), (0.5, 0.36), (0.7, B), (0.9, T)]]
    s["X"] = [[(0.2, T), (0.8, B)], [(0.8, T), (0.2, B)]]
    s["Y"] = [[(0.2, T), (0.5, 0.52), (0.8, T)], [(0.5, 0.52), (0.5, B)]]
    s["Z"] = [[(0.2, T), (0.8, T), (0.2, B), (0.8, B)]]
    # lowercase
    s["a"] = [a(0.46, 0.66, 0.22, 0.26, 0, 360), [(0.68, X), (0.68, B)]]
    s["b"] = [[(0.25, T), (0.25, B)], a(0.49, 0.66, 0.23, 0.26, 0, 360)]
    s["d"] = [[(0.72, T), (0.72, B)], a(0.48, 0.66, 0.23, 0.26, 0, 360)]
    s["e"] = [[(0.26, 0.6), (0.71, 0.6)] + a(0.48, 0.66, 0.23, 0.26, 13, 330)]
    s["f"] = [a(0.6, 0.22, 0.17, 0.14, 10, 180) + [(0.43, 0.22), (0.43, B)], [(0.27, X), (0.62, X)]]
    s["g"] = [a(0.48, 0.62, 0.22, 0.22, 0, 360), [(0.7, X), (0.7, 0.86), (0.6, 0.99), (0.36, 0.99), (0.27, 0.92)]]
    s["h"] = [[(0.25, T), (0.25, B)], [(0.25, 0.56)] + a(0.47, 0.56, 0.22, 0.16, 180, 0) + [(0.69, 0.56), (0.69, B)]]
    s["i"] = [[(0.5, X), (0.5, B)], [(0.5, 0.24), (0.5, 0.26)]]
    s["j"] = [[(0.56, X), (0.56, 0.86), (0.5, 0.98), (0.34, 0.96)], [(0.56, 0.24), (0.56, 0.26)]]
    s["k"] = [[(0.25, T), (0.25, B)], [(0.68, X), (0.25, 0.66)], [(0.42, 0.56), (0.7, B)]]
    s["l"] = [[(0.48, T), (0.48, 0.84), (0.55, B), (0.66, 0.88)]]
    s["m"] = [
        [(0.14, B), (0.14, X)],
        [(0.14, 0.52)] + a(0.32, 0.52, 0.18, 0.13, 180, 0) + [(0.5, 0.52), (0.5, B)],
        [(0.5, 0.52)] + a(0.68, 0.52, 0.18, 0.13, 180, 0) + [(0.86, 0.52), (0.86, B)],
    ]
    s["n"] = [[(0.27, X), (0.27, B)], [(0.27, 0.56)] + a(0.5, 0.56, 0.23, 0.16, 180, 0) + [(0.73, 0.56), (0.73, B)]]
    s["p"] = [[(0.26, X), (0.26, 0.99)], a(0.5, 0.64, 0.23, 0.24, 0, 360)]
    s["q"] = [a(0.48, 0.64, 0.23, 0.24, 0, 360), [(0.72, X), (0.72, 0.99)]]
    s["r"] = [[(0.3, X), (0.3, B)], [(0.3, 0.56)] + a(0.5, 0.56, 0.2, 0.16, 180, 30)]
    s["t"] = [[(0.45, 0.16), (0.45, 0.78)] + a(0.58, 0.78, 0.13, 0.13, 180, 300), [(0.27, X), (0.68, X)]]
    s["u"] = [[(0.27, X), (0.27, 0.74)] + a(0.5, 0.74, 0.23, 0.17, 180, 360) + [(0.73, 0.74), (0.73, X)], [(0.73, 0.6), (0.73, B)]]
    s["v"] = [[(0.25, X), (0.5, B), (0.75, X)]]
    s["w"] = [[(0.14, X), (0.32, B), (0.5, 0.56), (0.68, B), (0.86, X)]]
    s["x"] = [[(0.26, X), (0.74, B)], [(0.74, X), (0.26, B)]]
    s["y"] = [[(0.26, X), (0.52, B)], [(0.74, X), (0.4, 0.99), (0.28, 0.95)]]
    s["z"] = [[(0.26, X), (0.74, X), (0.26, B), (0.74, B)]]
    return s


_STROKES = _strokes()

# per-font style: (stroke width in tile units, x shear, x scale)
_FONT_STYLES = {
    "regular": (0.062, 0.0, 1.0),
    "bold": (0.105, 0.0, 1.0),
    "italic": (0.062, 0.22, 1.0),
    "bold_italic": (0.1, 0.22, 1.0),
    "thin": (0.04, 0.0, 1.0),
    "condensed": (0.06, 0.0, 0.72),
    "wide": (0.07, 0.0, 1.14),
}


def _render_mask(strokes, width: float, shear: float, xscale: float, tile: int = TILE) -> np.ndarray:
    ys, xs = np.mgrid[0:tile, 0:tile]
    px = (xs + 0.5) / tile
    py = (ys + 0.5) / tile
    pts = np.stack([px.ravel(), py.ravel()], axis=1)
    dmin = np.full(pts.shape[0], np.inf)
    for poly in strokes:
        q = np.array(poly, dtype=np.float64)
        q[:, 0] = 0.5 + (q[:, 0] - 0.5) * xscale + shear * (0.5 - q[:, 1])
        if len(q) == 1:
            d = np.linalg.norm(pts - q[0], axis=1)
            dmin = np.minimum(dmin, d)
            continue
        for a, b in zip(q[:-1], q[1:]):
            ab = b - a
            denom = ab @ ab
            if denom < 1e-12:
                d = np.linalg.norm(pts - a, axis=1)
            else:
                t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
                closest = a + t[:, None] * ab
                d = np.linalg.norm(pts - closest, axis=1)
            dmin = np.minimum(dmin, d)
    half = width / 2.0
    aa = 1.0 / tile  # one-pixel anti-alias ramp
    alpha = np.clip((half + aa - dmin) / aa, 0.0, 1.0)
    return alpha.reshape(tile, tile).astype(np.float32)


class GlyphAtlas:
    """Per-font map from character to a 64x64 opacity mask."""

    def __init__(self, font: str, masks: dict[str, np.ndarray], tile: int = TILE):
        missing = [c for c in ALPHABET if c not in masks]
        if missing:
            raise ValueError(f"glyph {missing[0]!r} absent")
        extra = [c for c in masks if c not in ALPHABET]
        if extra:
            raise ValueError(f"glyph {extra[0]!r} outside the 55-symbol alphabet")
        for c, m in masks.items():
            if m.shape != (tile, tile):
                raise ValueError(f"glyph {c!r} mask is {m.shape}, expected {(tile, tile)}")
            if m.min() < 0.0 or m.max() > 1.0:
                raise ValueError(f"glyph {c!r} mask values outside [0, 1]")
        self.font = font
        self.tile = tile
        self.masks = {c: masks[c].astype(np.float32) for c in ALPHABET}

    def mask(self, ch: str) -> np.ndarray:
        if ch not in self.masks:
            raise ValueError(f"glyph {ch!r} absent")
        return self.masks[ch]


_BUILTIN_CACHE: dict[str, GlyphAtlas] = {}


def builtin_atlas(font: str = "regular") -> GlyphAtlas:
    """Rasterise (and cache) one style of the built-in stroke font."""
    if font not in _FONT_STYLES:
        raise ValueError(f"unknown font {font!r}; built-ins: {sorted(_FONT_STYLES)}")
    if font not in _BUILTIN_CACHE:
        width, shear, xscale = _FONT_STYLES[font]
        masks = {c: _render_mask(_STROKES[c], width, shear, xscale) for c in ALPHABET}
        _BUILTIN_CACHE[font] = GlyphAtlas(font, masks)
    return _BUILTIN_CACHE[font]


def _mask_filename(ch: str) -> str:
    # avoid upper/lower collisions on case-insensitive filesystems
    if ch.isdigit():
        return f"d_{ch}.png"
    return (f"u_{ch}" if ch.isupper() else f"l_{ch}") + ".png"


def save_atlas(atlas: GlyphAtlas, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {"font": atlas.font, "tile": atlas.tile, "masks": {}}
    for ch in ALPHABET:
        fname = _mask_filename(ch)
        write_gray(path / fname, atlas.masks[ch])
        manifest["masks"][ch] = fname
    with open(path / "atlas.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_glyph_atlas(path) -> GlyphAtlas:
    """Load an atlas directory, or a built-in font by `builtin:<name>` id."""
    spath = str(path)
    if spath.startswith("builtin:"):
        return builtin_atlas(spath.split(":", 1)[1])
    path = Path(path)
    manifest_file = path / "atlas.json"
    if not manifest_file.exists():
        raise FileNotFoundError(f"no atlas manifest at {manifest_file}")
    with open(manifest_file) as f:
        manifest = json.load(f)
    masks = {}
    for ch in ALPHABET:
        if ch not in manifest.get("masks", {}):
            raise ValueError(f"glyph {ch!r} absent")
        fname = manifest["masks"][ch]
        fpath = path / fname
        if fname.endswith(".npy"):
            m = np.load(fpath).astype(np.float32)
            if m.min() < 0.0 or m.max() > 1.0:
                raise ValueError(f"glyph {ch!r} mask values outside [0, 1]")
        else:
            m = read_gray(fpath)
        masks[ch] = m
    return GlyphAtlas(manifest.get("font", path.name), masks, manifest.get("tile", TILE))
