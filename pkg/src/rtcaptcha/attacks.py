"""Transfer attacks: FGSM, iterative and momentum variants, and the scaled
Gaussian-smoothed channel-shift attack with Nesterov-style sign updates.

All attacks share one iterative engine, so the degenerate configurations
reduce to each other bit-identically:

    sgtcs(m=1, sigma=0, shift off, nag off)  ==  mifgsm
    mifgsm(mu=0)                             ==  ifgsm
    ifgsm(T=1)                               ==  fgsm

Inputs live in [0, 1]; every iterate stays inside the L-inf epsilon ball of
the original image and inside the valid pixel range.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import fftconvolve

from .tensor import Model, loss_and_input_gradient_batch

SHIFT_MODES = ("off", "as_stated", "symmetric")


class AttackError(RuntimeError):
    pass


@dataclass
class AttackConfig:
    eps: float = 0.1
    iters: int = 10
    mu: float = 1.0
    sigma: float = 3.0
    scales: int = 5
    scale_weights: tuple | None = None  # default: uniform 1/m
    channel_shift: str = "symmetric"
    seed: int = 0
    nag: bool = True  # lookahead + intermediate momentum blend; off = classic momentum
    random_kernel: bool = False  # sample the smoothing matrix instead of Eq-style Gaussian

    @property
    def alpha(self) -> float:
        return self.eps / self.iters

    def weights(self) -> np.ndarray:
        if self.scale_weights is None:
            return np.full(self.scales, 1.0 / self.scales)
        w = np.asarray(self.scale_weights, dtype=np.float64)
        return w

    def validate(self):
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if self.scales < 1:
            raise ValueError(f"scales must be >= 1, got {self.scales}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.channel_shift not in SHIFT_MODES:
            raise ValueError(f"channel_shift must be one of {SHIFT_MODES}")
        w = self.weights()
        if w.shape != (self.scales,) or not math.isclose(float(w.sum()), 1.0, abs_tol=1e-9):
            raise ValueError("scale weights must have one entry per scale and sum to 1")

    def to_json(self) -> str:
        d = self.__dict__.copy()
        if d["scale_weights"] is not None:
            d["scale_weights"] = list(d["scale_weights"])
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "AttackConfig":
        d = json.loads(s)
        if d.get("scale_weights") is not None:
            d["scale_weights"] = tuple(d["scale_weights"])
        return cls(**d)


@dataclass
class GaussianKernel:
    """Discrete 2-D Gaussian, radius ceil(3 sigma), renormalised to sum 1."""

    sigma: float
    radius: int
    weights: np.ndarray = field(repr=False)
    raw: np.ndarray = field(repr=False)  # pre-normalisation values of the analytic formula


def gaussian_kernel(sigma: float) -> GaussianKernel:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3 * sigma)
    ii, jj = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    raw = np.exp(-(ii**2 + jj**2) / (2.0 * sigma**2)) / (2.0 * math.pi * sigma**2)
    return GaussianKernel(sigma, r, raw / raw.sum(), raw)


def smooth_gradient(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Channelwise same-size convolution with zero padding."""
    single = grad.ndim == 3
    g = grad[None] if single else grad
    out = fftconvolve(g, kernel[None, :, :, None], mode="same", axes=(1, 2))
    out = out.astype(grad.dtype, copy=False)
    return out[0] if single else out


def clip_to_ball(x_adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    """Project onto the L-inf ball around x, then onto the valid pixel range."""
    if x_adv.shape != x.shape:
        raise ValueError(f"shape mismatch {x_adv.shape} vs {x.shape}")
    return np.clip(np.clip(x_adv, x - eps, x + eps), 0.0, 1.0)


def _as_batch(x, y):
    if x.ndim == 3:
        return x[None], np.array([y]), True
    return x, np.asarray(y), False


def _l1_normalize(g: np.ndarray) -> np.ndarray:
    n = np.abs(g).sum(axis=(1, 2, 3), keepdims=True)
    return np.divide(g, n, out=np.zeros_like(g), where=n > 0)


def sgtcs_gradient(model: Model, x: np.ndarray, y, cfg: AttackConfig) -> np.ndarray:
    """Scale-ensembled, Gaussian-smoothed input gradient.

    Averages the loss gradients at inputs x / 2^k for k = 0..m-1 with the
    configured weights, then convolves channelwise with the Gaussian kernel
    (sigma = 0 skips the smoothing entirely).
    """
    cfg.validate()
    xb, yb, single = _as_batch(x, y)
    weights = cfg.weights()
    total = np.zeros_like(xb)
    for k in range(cfg.scales):
        _, grad = loss_and_input_gradient_batch(model, xb / (2.0**k), yb)
        total += weights[k] * grad
    if cfg.sigma > 0:
        total = smooth_gradient(total, gaussian_kernel(cfg.sigma).weights)
    return total[0] if single else total


def sgtcs(model: Model, x: np.ndarray, y, cfg: AttackConfig, trace: list | None = None) -> np.ndarray:
    """Iterative sign attack with scale ensembling, gradient smoothing,
    per-channel random shifts and (by default) Nesterov lookahead.

    Passing a list as `trace` appends (x_t, g_t) after every iteration.
    """
    cfg.validate()
    xb, yb, single = _as_batch(x, y)
    x0 = xb.astype(model.dtype, copy=True)
    n = x0.shape[0]
    channels = x0.shape[3]
    alpha = cfg.alpha
    g = np.zeros_like(x0)
    xt = x0.copy()
    rngs = [np.random.default_rng([cfg.seed, i]) for i in range(n)]
    wg_kernel_radius = math.ceil(3 * cfg.sigma) if cfg.sigma > 0 else 1

    for t in range(cfg.iters):
        x_eval = xt + alpha * cfg.mu * g if cfg.nag else xt
        sg = sgtcs_gradient(model, x_eval, yb, cfg)
        if not np.all(np.isfinite(sg)):
            raise AttackError(f"non-finite gradient at iteration {t}")
        if cfg.nag:
            ghat = cfg.mu * g + _l1_normalize(sg)
        else:
            ghat = sg
        if cfg.random_kernel:
            side = 2 * wg_kernel_radius + 1
            wg = np.stack([rngs[i].normal(0.0, cfg.sigma, size=(side, side)) for i in range(n)])
            ghat = np.stack([smooth_gradient(ghat[i], wg[i]) for i in range(n)])
        if cfg.channel_shift != "off":
            lo = -cfg.eps if cfg.channel_shift == "symmetric" else 0.0
            b_u = np.stack([rngs[i].uniform(lo, cfg.eps, size=channels) for i in range(n)])
            # the bias lives in the units of the field it post-processes: an
            # L1-normalised gradient has per-pixel scale mean|ghat|, so the
            # draw from U(.,eps) is applied relative to that scale
            field_scale = np.abs(ghat).mean(axis=(1, 2, 3), keepdims=True)
            ghat = ghat + (b_u[:, None, None, :] * field_scale).astype(ghat.dtype)
        g = cfg.mu * g + _l1_normalize(ghat)
        xt = clip_to_ball(xt + alpha * np.sign(g), x0, cfg.eps).astype(x0.dtype)
        if trace is not None:
            trace.append((xt.copy(), g.copy()))
    return xt[0] if single else xt


def _degenerate(cfg: AttackConfig) -> AttackConfig:
    return replace(cfg, scales=1, scale_weights=None, sigma=0.0, channel_shift="off", nag=False, random_kernel=False)


def fgsm(model: Model, x: np.ndarray, y, eps: float) -> np.ndarray:
    """Single-step sign attack: x + eps * sign(grad), clamped to [0, 1]."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    cfg = _degenerate(AttackConfig(eps=eps, iters=1, mu=0.0))
    return sgtcs(model, x, y, cfg)


def ifgsm(model: Model, x: np.ndarray, y, cfg: AttackConfig, trace: list | None = None) -> np.ndarray:
    """T steps of size eps/T, each followed by ball clipping."""
    cfg.validate()
    return sgtcs(model, x, y, replace(_degenerate(cfg), mu=0.0), trace)


def mifgsm(model: Model, x: np.ndarray, y, cfg: AttackConfig, trace: list | None = None) -> np.ndarray:
    """Iterative sign attack with an L1-normalised momentum accumulator."""
    cfg.validate()
    return sgtcs(model, x, y, _degenerate(cfg), trace)


ATTACKS = {"fgsm": None, "ifgsm": ifgsm, "mifgsm": mifgsm, "sgtcs": sgtcs}


def run_attack(name: str, model: Model, x: np.ndarray, y, cfg: AttackConfig) -> np.ndarray:
    if name == "fgsm":
        return fgsm(model, x, y, cfg.eps)
    if name not in ATTACKS:
        raise ValueError(f"unknown attack {name!r}; choose from {sorted(ATTACKS)}")
    return ATTACKS[name](model, x, y, cfg)


def attack_dataset(name: str, model: Model, dataset, cfg: AttackConfig, batch_size: int = 64):
    """Attack every tile of a dataset (batched); returns a new Dataset whose
    manifest carries an attack-provenance block."""
    images = dataset.images()
    labels = dataset.labels()
    out = np.empty_like(images)
    for start in range(0, len(images), batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = run_attack(name, model, images[sl], labels[sl], cfg)
    attacked = dataset.replace_images(out)
    attacked.attack_provenance = {"attack": name, "config": json.loads(cfg.to_json()), "surrogate": model.arch}
    return attacked
