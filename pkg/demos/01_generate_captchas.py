"""Walkthrough: glyph atlases, pseudo-adversarial foregrounds, backgrounds,
and full CAPTCHA composition. Writes sample images under demos/out/."""

from pathlib import Path

import numpy as np

from rtcaptcha.backgrounds import BackgroundSpec, builtin_library
from rtcaptcha.generate import CaptchaSpec, ForegroundSpec, GenerationConfig, compose_captcha, generate_dataset
from rtcaptcha.glyphs import FONT_NAMES, builtin_atlas
from rtcaptcha.imgio import write_gray, write_rgb

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# 1. the built-in procedural stroke font, seven style variants
for font in FONT_NAMES:
    atlas = builtin_atlas(font)
    write_gray(out / f"glyph_R_{font}.png", atlas.mask("R"))
print("wrote one 'R' mask per font variant")

# 2. a pseudo-adversarial foreground: true 'R' at p_t=0.9, false 'K' at p_f=0.4
rng = np.random.default_rng(42)
spec = ForegroundSpec("R", "K", p_t=0.9, p_f=0.4, jitter=(3, -2), color=(0.1, 0.1, 0.3))
from rtcaptcha.generate import pseudo_foreground

mask = pseudo_foreground(builtin_atlas("regular"), spec, rng)
write_gray(out / "pseudo_foreground_RK.png", mask)
print("pseudo foreground: solid true strokes, fragmented misleading strokes")

# 3. a four-character CAPTCHA strip over a prepared background
lib = builtin_library()
strip_spec = CaptchaSpec(
    characters=[
        ForegroundSpec("W", "M", color=(0.05, 0.1, 0.2)),
        ForegroundSpec("4", "A", color=(0.2, 0.05, 0.1)),
        ForegroundSpec("g", "q", color=(0.1, 0.15, 0.05)),
        ForegroundSpec("Q", "G", color=(0.0, 0.0, 0.0)),
    ],
    background=BackgroundSpec("clouds", [("rotate", 5.0), ("blur", 0.6)]),
    post_ops={"noise": 0.01, "rotation": 4.0},
    seed=7,
)
img, label = compose_captcha(strip_spec, library=lib)
write_rgb(out / f"strip_{label}.png", img)
print("composed strip with label", label)

# 4. a labelled dataset sample (what solvers train on)
ds = generate_dataset(12, GenerationConfig(mode="clean"), seed=1)
for i, (tile, cls) in enumerate(ds.items[:6]):
    write_rgb(out / f"clean_tile_{i}_{ds.meta[i]['char']}.png", tile)
print("6 clean training tiles written to", out)
