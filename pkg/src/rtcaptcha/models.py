"""Solver-zoo CNN presets and the normal / adversarial training loops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .data import Dataset
from .glyphs import CLASS_COUNT
from .tensor import (
    Conv2d,
    Dense,
    DenseCatBlock,
    Flatten,
    MaxPool2d,
    Model,
    ReLU,
    ResidualBlock,
    backward,
    cross_entropy_batch,
    forward,
    softmax,
)

PRESETS = ("tiny_lenet", "tiny_vgg", "tiny_resnet", "tiny_dense")


class _Builder:
    def __init__(self, shape, rng, dtype):
        self.layers = []
        self.shape = shape
        self.rng = rng
        self.dtype = dtype

    def add(self, layer):
        self.shape = layer.out_shape(self.shape)
        self.layers.append(layer)

    def conv(self, k, c_out, padding=0):
        self.add(Conv2d.init(k, self.shape[2], c_out, 1, padding, self.rng, self.dtype))

    def dense(self, d_out):
        self.add(Dense.init(self.shape[0], d_out, self.rng, self.dtype))


def build_model(arch: str, seed: int = 0, input_hw: int = 64, channels: int = 3,
                num_classes: int = CLASS_COUNT, dtype=np.float32) -> Model:
    """Randomly initialised preset (He fan-in scaling), 64x64x3 -> 55 logits.

    input_hw below 32 builds a reduced variant with the same family motif,
    used by the small-instance gradient checks.
    """
    if arch not in PRESETS:
        raise ValueError(f"unknown preset {arch!r}; choose from {PRESETS}")
    rng = np.random.default_rng(seed)
    b = _Builder((input_hw, input_hw, channels), rng, dtype)
    small = input_hw < 32
    if not small:
        b.add(MaxPool2d())  # parameter-free stem: glyph strokes survive at half res
    if arch == "tiny_lenet":
        if small:
            b.conv(3, 6)
            b.add(ReLU())
            b.add(MaxPool2d())
            b.add(Flatten())
            b.dense(16)
            b.add(ReLU())
        else:
            b.conv(5, 8)
            b.add(ReLU())
            b.add(MaxPool2d())
            b.conv(5, 16)
            b.add(ReLU())
            b.add(MaxPool2d())
            b.add(Flatten())
            b.dense(64)
            b.add(ReLU())
    elif arch == "tiny_vgg":
        widths = (6,) if small else (10, 20, 28)
        for i, w in enumerate(widths):
            b.conv(3, w, padding=1)
            b.add(ReLU())
            if i < 2:
                b.conv(3, w, padding=1)
                b.add(ReLU())
            b.add(MaxPool2d())
        b.add(Flatten())
        b.dense(16 if small else 96)
        b.add(ReLU())
    elif arch == "tiny_resnet":
        stem = 6 if small else 14
        b.conv(3, stem, padding=1)
        b.add(ReLU())
        if small:
            b.add(ResidualBlock.init(stem, 3, rng, dtype))
            b.add(MaxPool2d())
        else:
            for _ in range(2):
                b.add(ResidualBlock.init(stem, 3, rng, dtype))
                b.add(MaxPool2d())
        b.add(Flatten())
    elif arch == "tiny_dense":
        stem = 6 if small else 8
        b.conv(3, stem, padding=1)
        b.add(ReLU())
        if small:
            b.add(DenseCatBlock.init(stem, 4, 3, rng, dtype))
        else:
            b.add(DenseCatBlock.init(stem, 10, 3, rng, dtype))
            b.add(MaxPool2d())
            b.add(DenseCatBlock.init(stem + 10, 10, 3, rng, dtype))
        b.add(MaxPool2d())
        b.add(Flatten())
    b.dense(num_classes)
    return Model(b.layers, (input_hw, input_hw, channels), num_classes, arch)


# ---------------------------------------------------------------------------
# training


@dataclass
class AdversarialSpec:
    lam: float = 0.3
    k: int = 16
    eps_mean: float = 0.0  # 0..255 pixel units
    eps_std: float = 8.0
    eps_low: float = 0.0
    eps_high: float = 16.0

    def validate(self, batch_size: int):
        if not 0 < self.lam <= 1.0:
            raise ValueError(f"lambda must be in (0, 1], got {self.lam}")
        # k = 0 is allowed as the degenerate all-clean weighting
        if not 0 <= self.k <= batch_size:
            raise ValueError(f"need 0 <= k <= batch size, got k={self.k} m={batch_size}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    adversarial: AdversarialSpec | None = None


def _truncnorm(spec: AdversarialSpec):
    a = (spec.eps_low - spec.eps_mean) / spec.eps_std
    b = (spec.eps_high - spec.eps_mean) / spec.eps_std
    return stats.truncnorm(a, b, loc=spec.eps_mean, scale=spec.eps_std)


def sample_epsilons(n: int, rng: np.random.Generator, spec: AdversarialSpec | None = None) -> np.ndarray:
    """Per-image attack magnitudes in [0, 1] pixel units."""
    spec = spec or AdversarialSpec()
    return _truncnorm(spec).rvs(n, random_state=rng) / 255.0


def epsilon_sampler_mean(spec: AdversarialSpec | None = None) -> float:
    spec = spec or AdversarialSpec()
    return float(_truncnorm(spec).mean()) / 255.0


def _fgsm_batch(model: Model, images: np.ndarray, labels: np.ndarray, eps: np.ndarray) -> np.ndarray:
    from .tensor import loss_and_input_gradient_batch

    _, grads = loss_and_input_gradient_batch(model, images, labels)
    stepped = images + eps[:, None, None, None].astype(images.dtype) * np.sign(grads)
    return np.clip(stepped, 0.0, 1.0)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    if n <= batch_size:
        yield order
        return
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start : start + batch_size]


def _sgd_step(model: Model, grads, velocities, lr: float, momentum: float):
    for p, g, v in zip(model.parameters(), grads, velocities):
        v *= momentum
        v -= lr * g
        p += v


def train(model: Model, data: Dataset, cfg: TrainConfig) -> tuple[Model, dict]:
    """SGD-with-momentum minimisation of the mean cross-entropy."""
    if cfg.adversarial is not None:
        raise ValueError("cfg.adversarial is set; use train_adversarial")
    return _train_loop(model, data, cfg, audit_hook=None)


def train_adversarial(model: Model, data: Dataset, cfg: TrainConfig,
                      audit_hook: Callable | None = None) -> tuple[Model, dict]:
    """Training on a weighted mix of clean and single-step adversarial images.

    Each batch of m images keeps m-k clean and attacks the last k with
    per-image magnitudes drawn from a truncated normal (0..16/255); the batch
    loss is (sum clean + lambda * sum adversarial) / ((m-k) + lambda*k).
    """
    if cfg.adversarial is None:
        raise ValueError("cfg.adversarial is not set; use train")
    cfg.adversarial.validate(min(cfg.batch_size, len(data)))
    return _train_loop(model, data, cfg, audit_hook=audit_hook)


def _train_loop(model, data, cfg, audit_hook):
    if len(data) == 0:
        raise ValueError("dataset is empty")
    images = data.images().astype(model.dtype)
    labels = data.labels()
    velocities = [np.zeros_like(p) for p in model.parameters()]
    history = {"loss": [], "accuracy": []}
    adv = cfg.adversarial
    for epoch in range(cfg.epochs):
        # short warmup: full-rate momentum SGD from a cold start can kill all
        # relus in the first few batches on the deeper presets
        warmup = min(1.0, (epoch + 1) / 3.0)
        lr = cfg.learning_rate * warmup
        rng = np.random.default_rng([cfg.seed, epoch])
        total_loss, total_correct, total_seen = 0.0, 0, 0
        for idx in _epoch_batches(len(data), cfg.batch_size, rng):
            xb, yb = images[idx], labels[idx]
            m = len(idx)
            if adv is not None:
                k = min(adv.k, m)
                if k > 0:
                    eps = sample_epsilons(k, rng, adv).astype(model.dtype)
                    x_adv = _fgsm_batch(model, xb[m - k :], yb[m - k :], eps)
                    xb = np.concatenate([xb[: m - k], x_adv])
                weights = np.concatenate([np.ones(m - k), np.full(k, adv.lam)])
                denom = (m - k) + adv.lam * k
            else:
                weights = np.ones(m)
                denom = float(m)
            logits, tape = forward(model, xb)
            losses, dlogits = cross_entropy_batch(logits, yb)
            if adv is not None:
                # the contract form: (sum clean + lambda * sum adversarial) / denom
                batch_loss = float((losses[: m - k].sum() + adv.lam * losses[m - k :].sum()) / denom)
            else:
                batch_loss = float(losses.sum() / denom)
            dlogits = dlogits * (weights[:, None] / denom)
            _, grads = backward(model, tape, dlogits.astype(model.dtype), need_input_grad=False)
            _sgd_step(model, grads, velocities, lr, cfg.momentum)
            if audit_hook is not None and adv is not None:
                audit_hook(losses[: m - k], losses[m - k :], adv.lam, batch_loss)
            total_loss += batch_loss * m
            total_correct += int((logits.argmax(axis=1) == yb).sum())
            total_seen += m
        history["loss"].append(total_loss / total_seen)
        history["accuracy"].append(total_correct / total_seen)
    history["train_accuracy"] = accuracy(model, data)
    return model, history


def accuracy(model: Model, data: Dataset, batch_size: int = 256) -> float:
    images = data.images()
    labels = data.labels()
    correct = 0
    for start in range(0, len(images), batch_size):
        sl = slice(start, start + batch_size)
        logits, _ = forward(model, images[sl].astype(model.dtype))
        correct += int((logits.argmax(axis=1) == labels[sl]).sum())
    return correct / len(images)


def predict(model, image: np.ndarray):
    """Uniform predict interface over CNNs and shallow models.

    Returns (class id, score vector); argmax ties break to the lowest index.
    """
    if isinstance(model, Model):
        logits, _ = forward(model, image[None].astype(model.dtype))
        scores = softmax(logits[0].astype(np.float64))
        return int(scores.argmax()), scores
    return model.predict(image)
