"""CAPTCHA image synthesis: pseudo-adversarial foregrounds composited over
prepared backgrounds, with mild post-processing.

Every sample derives a private RNG stream from (master seed, index), so
generation is reproducible and embarrassingly parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backgrounds as bg
from .backgrounds import BackgroundLibrary, BackgroundSpec, builtin_library, prepare_background
from .data import Dataset
from .glyphs import ALPHABET, FONT_NAMES, TILE, GlyphAtlas, builtin_atlas, char_to_class

DEFAULT_P_TRUE = 0.9
DEFAULT_P_FALSE = 0.4


@dataclass
class ForegroundSpec:
    true_char: str
    false_char: str
    p_t: float = DEFAULT_P_TRUE
    p_f: float = DEFAULT_P_FALSE
    jitter: tuple[int, int] = (0, 0)  # false-glyph offset, pixels
    color: tuple[float, float, float] = (0.1, 0.1, 0.1)
    font: str = "regular"
    scale: float = 1.0  # glyph scale about the tile centre
    offset: tuple[int, int] = (0, 0)  # whole-glyph placement offset, pixels

    def validate(self):
        if self.false_char == self.true_char:
            raise ValueError("false_char must differ from true_char")
        if not (0.0 <= self.p_f <= self.p_t <= 1.0):
            raise ValueError(f"need 0 <= p_f <= p_t <= 1, got p_t={self.p_t} p_f={self.p_f}")
        if not 0.3 <= self.scale <= 1.3:
            raise ValueError(f"glyph scale out of range: {self.scale}")


@dataclass
class CaptchaSpec:
    characters: list[ForegroundSpec]
    background: BackgroundSpec
    post_ops: dict = field(default_factory=dict)  # keys: noise, rotation, erode
    seed: int | tuple = 0  # int or flat int sequence
    mode: str = "pseudo"  # or "clean"

    def validate(self):
        if not 1 <= len(self.characters) <= 8:
            raise ValueError(f"captcha length must be 1..8, got {len(self.characters)}")
        for c in self.characters:
            c.validate()
        if self.mode not in ("pseudo", "clean"):
            raise ValueError(f"unknown mode {self.mode!r}")


def _child_seed(seed, tag: int) -> list[int]:
    if isinstance(seed, (list, tuple)):
        return [*seed, tag]
    return [int(seed), tag]


def _shift_mask(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    sy0, sy1 = max(0, dy), min(h, h + dy)
    sx0, sx1 = max(0, dx), min(w, w + dx)
    out[sy0:sy1, sx0:sx1] = mask[sy0 - dy : sy1 - dy, sx0 - dx : sx1 - dx]
    return out


def _place_mask(mask, scale: float, dx: int, dy: int):
    if scale != 1.0:
        from scipy import ndimage

        c = (mask.shape[0] - 1) / 2.0
        # output (y,x) samples input at (y-c)/s + c: scale about the centre
        mask = ndimage.affine_transform(
            mask.astype(np.float64), np.diag([1.0 / scale, 1.0 / scale]),
            offset=c - c / scale, order=1, mode="constant", cval=0.0,
        ).astype(np.float32)
        mask = np.clip(mask, 0.0, 1.0)
    return _shift_mask(mask, dx, dy)


def _true_mask(atlas, spec):
    return _place_mask(atlas.mask(spec.true_char), spec.scale, spec.offset[0], spec.offset[1])


def pseudo_foreground(atlas: GlyphAtlas, spec: ForegroundSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-pixel Bernoulli composite of the true and false glyph masks.

    True-glyph pixels survive with probability p_t; false-glyph pixels
    outside the true glyph with probability p_f. Overlaps follow the
    true-glyph draw so the real character stays legible.
    """
    spec.validate()
    m_true = _true_mask(atlas, spec)
    m_false = _place_mask(atlas.mask(spec.false_char), spec.scale,
                          spec.offset[0] + spec.jitter[0], spec.offset[1] + spec.jitter[1])
    draw_t = rng.random(m_true.shape) < spec.p_t
    draw_f = rng.random(m_true.shape) < spec.p_f
    t_in = m_true > 0.0
    f_in = (m_false > 0.0) & ~t_in
    alpha = np.where(t_in, m_true * draw_t, 0.0) + np.where(f_in, m_false * draw_f, 0.0)
    return alpha.astype(np.float32)


def clean_foreground(atlas: GlyphAtlas, spec: ForegroundSpec) -> np.ndarray:
    """Full-opacity rendering of the true glyph only (normal-training data)."""
    return _true_mask(atlas, spec).copy()


def _blend(alpha: np.ndarray, color, background: np.ndarray) -> np.ndarray:
    a = alpha[..., None]
    col = np.asarray(color, dtype=np.float32)
    return (a * col + (1.0 - a) * background).astype(np.float32)


def compose_captcha(
    spec: CaptchaSpec,
    atlases: dict[str, GlyphAtlas] | None = None,
    library: BackgroundLibrary | None = None,
) -> tuple[np.ndarray, str]:
    """Render a CAPTCHA strip of 64x64 tiles; returns (image, label string)."""
    spec.validate()
    atlases = atlases or {}
    library = library or builtin_library()
    rng_fore = np.random.default_rng(_child_seed(spec.seed, 1))
    rng_bg = np.random.default_rng(_child_seed(spec.seed, 2))
    rng_post = np.random.default_rng(_child_seed(spec.seed, 3))

    base = prepare_background(spec.background, library, rng_bg)
    tiles = []
    for fspec in spec.characters:
        atlas = atlases.get(fspec.font) or builtin_atlas(fspec.font)
        if spec.mode == "clean":
            alpha = clean_foreground(atlas, fspec)
            # consume the same stream so clean == pseudo(p_t=1, p_f=0) per seed
            rng_fore.random(alpha.shape)
            rng_fore.random(alpha.shape)
        else:
            alpha = pseudo_foreground(atlas, fspec, rng_fore)
        tiles.append(_blend(alpha, fspec.color, base))
    img = np.concatenate(tiles, axis=1)

    rotation = float(spec.post_ops.get("rotation", 0.0))
    if rotation:
        img = bg.rotate_image(img, rng_post.uniform(-rotation, rotation))
    erode = int(spec.post_ops.get("erode", 0))
    if erode:
        img = bg.erode_image(img, erode)
    noise = float(spec.post_ops.get("noise", 0.0))
    if noise:
        img = bg.add_noise(img, noise, rng_post)

    label = "".join(f.true_char for f in spec.characters)
    return np.clip(img, 0.0, 1.0).astype(np.float32), label


@dataclass
class GenerationConfig:
    """Sampling distribution for dataset generation."""

    mode: str = "pseudo"
    p_t: float = DEFAULT_P_TRUE
    p_f: float = DEFAULT_P_FALSE
    fonts: tuple = FONT_NAMES
    background_ids: tuple = ()  # empty = all ids of the library
    library: BackgroundLibrary | None = None
    jitter_max: int = 4
    rotation_max: float = 8.0
    noise_max: float = 0.02
    blur_prob: float = 0.3
    scale_range: tuple = (0.7, 1.05)
    offset_max: int = 5
    length: int = 1

    def validate(self):
        if self.mode not in ("pseudo", "clean"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (0.0 <= self.p_f <= self.p_t <= 1.0):
            raise ValueError(f"need 0 <= p_f <= p_t <= 1, got p_t={self.p_t} p_f={self.p_f}")
        if not 1 <= self.length <= 8:
            raise ValueError(f"length must be 1..8, got {self.length}")


def _sample_chars(count: int, rng: np.random.Generator) -> list[str]:
    # balanced block shuffling: uniform marginals, near-equal class counts
    chars = []
    classes = np.arange(len(ALPHABET))
    while len(chars) < count:
        rng.shuffle(classes)
        chars.extend(ALPHABET[c] for c in classes)
    return chars[:count]


def sample_spec(config: GenerationConfig, seed, rng: np.random.Generator, chars=None) -> CaptchaSpec:
    config.validate()
    library = config.library or builtin_library()
    ids = list(config.background_ids) or library.ids()
    chosen = chars or [ALPHABET[rng.integers(len(ALPHABET))] for _ in range(config.length)]
    characters = []
    for ch in chosen:
        others = [c for c in ALPHABET if c != ch]
        false_char = others[rng.integers(len(others))]
        jitter = tuple(int(v) for v in rng.integers(-config.jitter_max, config.jitter_max + 1, size=2))
        color = tuple(rng.uniform(0.0, 0.5, size=3).round(3))
        font = config.fonts[rng.integers(len(config.fonts))]
        scale = round(float(rng.uniform(*config.scale_range)), 3)
        offset = tuple(int(v) for v in rng.integers(-config.offset_max, config.offset_max + 1, size=2))
        characters.append(
            ForegroundSpec(ch, false_char, config.p_t, config.p_f, jitter, color, font, scale, offset)
        )
    ops = []
    if rng.random() < config.blur_prob:
        ops.append(("blur", float(rng.uniform(0.4, 1.0))))
    if rng.random() < 0.3:
        ops.append(("rotate", float(rng.uniform(-10, 10))))
    bg_spec = BackgroundSpec(ids[rng.integers(len(ids))], ops)
    post = {
        "rotation": float(rng.uniform(0, config.rotation_max)),
        "noise": float(rng.uniform(0, config.noise_max)),
    }
    return CaptchaSpec(characters, bg_spec, post, seed=seed, mode=config.mode)


def generate_dataset(count: int, config: GenerationConfig, seed: int, split: str = "train") -> Dataset:
    """Sample `count` labelled single-character tiles."""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    config.validate()
    if config.length != 1:
        raise ValueError("datasets are per-character tiles; compose_captcha renders strips")
    library = config.library or builtin_library()
    char_rng = np.random.default_rng([seed, 0])
    chars = _sample_chars(count, char_rng)
    items, meta = [], []
    for i in range(count):
        rng = np.random.default_rng([seed, i + 1])
        spec = sample_spec(config, seed=[seed, i + 1], rng=rng, chars=chars[i : i + 1])
        img, label = compose_captcha(spec, library=library)
        items.append((img, char_to_class(label)))
        meta.append(
            {
                "char": label,
                "seed": [seed, i + 1],
                "font": spec.characters[0].font,
                "background": spec.background.source,
                "mode": config.mode,
            }
        )
    return Dataset(items, split=split, meta=meta)
