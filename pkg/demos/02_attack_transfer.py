"""Walkthrough: train a small surrogate, attack tiles with the smoothing
attack, inspect the perturbation, and check transfer to a second solver."""

from pathlib import Path

import numpy as np

from rtcaptcha import AttackConfig, TrainConfig, build_model, sgtcs, train
from rtcaptcha.attacks import attack_dataset, gaussian_kernel
from rtcaptcha.evaluate import per_char_rate
from rtcaptcha.generate import GenerationConfig, generate_dataset
from rtcaptcha.imgio import write_rgb

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

print("generating a small corpus (few hundred tiles)...")
train_ds = generate_dataset(660, GenerationConfig(mode="clean"), seed=7)
eval_ds = generate_dataset(110, GenerationConfig(mode="pseudo"), seed=1007, split="test")

print("training surrogate (tiny_vgg) and a transfer target (tiny_lenet)...")
surrogate, hist = train(build_model("tiny_vgg", seed=0), train_ds,
                        TrainConfig(epochs=10, learning_rate=0.01, seed=0))
print("  surrogate train accuracy:", round(hist["train_accuracy"], 3))
solver, hist = train(build_model("tiny_lenet", seed=1), train_ds,
                     TrainConfig(epochs=10, learning_rate=0.01, seed=1))
print("  solver train accuracy:", round(hist["train_accuracy"], 3))

kernel = gaussian_kernel(3.0)
print("smoothing kernel: radius", kernel.radius, "sum", kernel.weights.sum())

cfg = AttackConfig(eps=0.1, iters=10, mu=1.0, sigma=3.0, scales=5, seed=3)
attacked = attack_dataset("sgtcs", surrogate, eval_ds, cfg)

img0 = eval_ds.items[0][0]
adv0 = attacked.items[0][0]
write_rgb(out / "tile_before.png", img0)
write_rgb(out / "tile_after.png", adv0)
write_rgb(out / "tile_delta.png", np.abs(adv0 - img0) / 0.1)
print("max |delta| =", float(np.abs(adv0 - img0).max()), "(epsilon budget 0.1)")

print("recognition on attacked tiles:")
print("  surrogate (white-box):", round(per_char_rate(surrogate, attacked), 3))
print("  transfer solver      :", round(per_char_rate(solver, attacked), 3))
print("  transfer solver clean:", round(per_char_rate(solver, eval_ds), 3))
