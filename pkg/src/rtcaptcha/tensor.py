"""Dense-tensor numeric core: small convolutional classifiers with exact
input/parameter gradients, written on plain numpy.

Layout conventions: images are H x W x C, batches are N x H x W x C,
convolution kernels are K x K x C_in x C_out. float32 is the working
precision; float64 ("oracle mode", see Model.astype) is used by the
finite-difference cross checks.
"""

from __future__ import annotations

import json
import struct
from typing import Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

MAGIC = b"RTCM"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Raised when tensor shapes do not compose."""


class GradientTape:
    """Per-layer activation caches from one forward pass.

    Holds exactly what the backward pass needs; replaying the same inputs
    through the same model reproduces the forward outputs bit-identically.
    """

    def __init__(self):
        self.caches = []

    def push(self, cache):
        self.caches.append(cache)


def _check_finite(a: np.ndarray, what: str):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# convolution primitives


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """N,H,W,C -> ((N*Ho*Wo) x (k*k*C) patch matrix, (n, ho, wo)).

    Patch features are ordered (i, j, c), matching a plain reshape of the
    kernel; built by k*k large contiguous slice copies.
    """
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    n, hp, wp, c = x.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    # one fused (j, c) run of k*c contiguous floats per window keeps the
    # copies near memory bandwidth
    rows = x.reshape(n, hp, wp * c)
    jwin = np.lib.stride_tricks.sliding_window_view(rows, k * c, axis=2)[:, :, :: c * stride]
    cols = np.empty((n, ho, wo, k, k * c), dtype=x.dtype)
    for i in range(k):
        cols[:, :, :, i, :] = jwin[:, i : i + stride * ho : stride, :wo, :]
    return cols.reshape(n * ho * wo, k * k * c), (n, ho, wo)


def _col2im(dcols: np.ndarray, in_shape, k: int, stride: int, padding: int, geom) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch gradients back onto the input."""
    n, h, w, c = in_shape
    _, ho, wo = geom
    dcols = dcols.reshape(n, ho, wo, k, k, c)
    dxp = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
    if padding:
        return dxp[:, padding : padding + h, padding : padding + w, :]
    return dxp


def _conv_raw(x: np.ndarray, kernel: np.ndarray, stride: int, padding: int):
    cols, geom = _im2col(x, kernel.shape[0], stride, padding)
    y = cols @ kernel.reshape(-1, kernel.shape[3])
    n, ho, wo = geom
    return y.reshape(n, ho, wo, kernel.shape[3]), cols, geom


def _conv_input_grad(dy: np.ndarray, kernel: np.ndarray, in_shape, stride: int, padding: int, geom):
    """dL/dinput. Stride-1 uses a transposed convolution (one GEMM); the
    general case falls back to scatter-add."""
    k = kernel.shape[0]
    if stride == 1 and k - 1 - padding >= 0:
        flipped = np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))
        out, _, _ = _conv_raw(dy, flipped, 1, k - 1 - padding)
        return out
    n, ho, wo = geom
    dcols = dy.reshape(n * ho * wo, -1) @ kernel.reshape(-1, kernel.shape[3]).T
    return _col2im(dcols, in_shape, k, stride, padding, geom)


def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate a batch (or single image) with a K x K x C_in x C_out kernel.

    Output extent per spatial axis is floor((H + 2*padding - K)/stride) + 1.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input and KKIO kernel, got {x.shape} and {kernel.shape}")
    k = kernel.shape[0]
    if kernel.shape[1] != k:
        raise ShapeError(f"kernel must be square, got {kernel.shape[:2]}")
    if k % 2 != 1:
        raise ShapeError(f"kernel extent must be odd, got {k}")
    if kernel.shape[2] != x.shape[3]:
        raise ShapeError(
            f"kernel expects {kernel.shape[2]} input channels, image has {x.shape[3]}"
        )
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be non-negative, got {padding}")
    if x.shape[1] + 2 * padding < k or x.shape[2] + 2 * padding < k:
        raise ShapeError(f"kernel {k}x{k} larger than padded input {x.shape[1:3]}")
    y, _, _ = _conv_raw(x, kernel, stride, padding)
    return y[0] if single else y


def conv_output_extent(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - k) // stride + 1


# ---------------------------------------------------------------------------
# layers


class Layer:
    """One step of a fixed-menu feedforward stack."""

    kind = "?"

    def out_shape(self, in_shape):
        raise NotImplementedError

    def forward(self, x):
        """Return (y, cache)."""
        raise NotImplementedError

    def backward(self, dy, cache):
        """Return (dx, grads) with grads aligned to params()."""
        raise NotImplementedError

    def param_backward(self, dy, cache):
        """Parameter gradients only (training skips the input gradient of
        the earliest parametered layer)."""
        return self.backward(dy, cache)[1]

    def params(self) -> list[np.ndarray]:
        return []

    def spec(self) -> dict:
        return {"kind": self.kind}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, kernel: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0):
        self.kernel = kernel
        self.bias = bias
        self.stride = stride
        self.padding = padding

    @classmethod
    def init(cls, k, c_in, c_out, stride=1, padding=0, rng=None, dtype=DEFAULT_DTYPE):
        rng = rng or np.random.default_rng(0)
        fan_in = k * k * c_in
        scale = np.sqrt(2.0 / fan_in)
        kernel = (rng.standard_normal((k, k, c_in, c_out)) * scale).astype(dtype)
        bias = np.zeros(c_out, dtype=dtype)
        return cls(kernel, bias, stride, padding)

    def out_shape(self, in_shape):
        h, w, c = in_shape
        k = self.kernel.shape[0]
        if c != self.kernel.shape[2]:
            raise ShapeError(f"conv2d: input has {c} channels, kernel expects {self.kernel.shape[2]}")
        ho = conv_output_extent(h, k, self.stride, self.padding)
        wo = conv_output_extent(w, k, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: kernel {k} too large for input {h}x{w} at padding {self.padding}")
        return (ho, wo, self.kernel.shape[3])

    def forward(self, x):
        y, cols, geom = _conv_raw(x, self.kernel, self.stride, self.padding)
        return y + self.bias, (cols, geom, x.shape)

    def backward(self, dy, cache):
        dx = _conv_input_grad(dy, self.kernel, cache[2], self.stride, self.padding, cache[1])
        return dx, self.param_backward(dy, cache)

    def param_backward(self, dy, cache):
        cols = cache[0]
        dy2 = dy.reshape(-1, self.kernel.shape[3])
        dkernel = (cols.T @ dy2).reshape(self.kernel.shape)
        dbias = dy2.sum(axis=0)
        return [dkernel, dbias]

    def params(self):
        return [self.kernel, self.bias]

    def spec(self):
        return {
            "kind": self.kind,
            "k": self.kernel.shape[0],
            "c_in": self.kernel.shape[2],
            "c_out": self.kernel.shape[3],
            "stride": self.stride,
            "padding": self.padding,
        }


class MaxPool2d(Layer):
    """Non-overlapping max pooling; ties route the gradient to the first
    maximal element in row-major window order."""

    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        self.size = size

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if h < self.size or w < self.size:
            raise ShapeError(f"maxpool2d: window {self.size} larger than input {h}x{w}")
        return (h // self.size, w // self.size, c)

    def forward(self, x):
        s = self.size
        n, h, w, c = x.shape
        ho, wo = h // s, w // s
        v = x[:, : ho * s, : wo * s, :].reshape(n, ho, s, wo, s, c)
        win = v.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, s * s)
        idx = win.argmax(axis=-1)  # argmax picks the first max: deterministic ties
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, dy, cache):
        idx, in_shape = cache
        s = self.size
        n, h, w, c = in_shape
        ho, wo = h // s, w // s
        dwin = np.zeros((n, ho, wo, c, s * s), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(in_shape, dtype=dy.dtype)
        dx[:, : ho * s, : wo * s, :] = (
            dwin.reshape(n, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * s, wo * s, c)
        )
        return dx, []

    def spec(self):
        return {"kind": self.kind, "size": self.size}


class ReLU(Layer):
    kind = "relu"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, []


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), []


class Dense(Layer):
    kind = "dense"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias

    @classmethod
    def init(cls, d_in, d_out, rng=None, dtype=DEFAULT_DTYPE):
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / d_in)
        w = (rng.standard_normal((d_in, d_out)) * scale).astype(dtype)
        b = np.zeros(d_out, dtype=dtype)
        return cls(w, b)

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got shape {in_shape}")
        if in_shape[0] != self.weight.shape[0]:
            raise ShapeError(f"dense: input width {in_shape[0]} != weight rows {self.weight.shape[0]}")
        return (self.weight.shape[1],)

    def forward(self, x):
        return x @ self.weight + self.bias, x

    def backward(self, dy, cache):
        dw = cache.T @ dy
        db = dy.sum(axis=0)
        dx = dy @ self.weight.T
        return dx, [dw, db]

    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return {"kind": self.kind, "d_in": self.weight.shape[0], "d_out": self.weight.shape[1]}


class ResidualBlock(Layer):
    """conv-relu-conv plus identity, relu on the sum. Channel-preserving."""

    kind = "residual"

    def __init__(self, conv1: Conv2d, conv2: Conv2d):
        self.conv1 = conv1
        self.conv2 = conv2
        self._relu = ReLU()

    @classmethod
    def init(cls, channels, k=3, rng=None, dtype=DEFAULT_DTYPE):
        pad = k // 2
        conv1 = Conv2d.init(k, channels, channels, 1, pad, rng, dtype)
        conv2 = Conv2d.init(k, channels, channels, 1, pad, rng, dtype)
        conv2.kernel *= 0.5  # damped second conv: skip path dominates early
        return cls(conv1, conv2)

    def out_shape(self, in_shape):
        s1 = self.conv1.out_shape(in_shape)
        s2 = self.conv2.out_shape(s1)
        if s2 != in_shape:
            raise ShapeError(f"residual block must preserve shape, {in_shape} -> {s2}")
        return in_shape

    def forward(self, x):
        h1, c1 = self.conv1.forward(x)
        a1, m1 = self._relu.forward(h1)
        h2, c2 = self.conv2.forward(a1)
        out, m_out = self._relu.forward(h2 + x)
        return out, (c1, m1, c2, m_out)

    def backward(self, dy, cache):
        c1, m1, c2, m_out = cache
        dsum, _ = self._relu.backward(dy, m_out)
        dh2 = dsum
        da1, g2 = self.conv2.backward(dh2, c2)
        dh1, _ = self._relu.backward(da1, m1)
        dx, g1 = self.conv1.backward(dh1, c1)
        return dx + dsum, g1 + g2

    def params(self):
        return self.conv1.params() + self.conv2.params()

    def spec(self):
        return {"kind": self.kind, "channels": self.conv1.kernel.shape[2], "k": self.conv1.kernel.shape[0]}


class DenseCatBlock(Layer):
    """Concatenates relu(conv(x)) onto the input channels (densely connected motif)."""

    kind = "densecat"

    def __init__(self, conv: Conv2d):
        self.conv = conv
        self._relu = ReLU()

    @classmethod
    def init(cls, c_in, growth, k=3, rng=None, dtype=DEFAULT_DTYPE):
        return cls(Conv2d.init(k, c_in, growth, 1, k // 2, rng, dtype))

    def out_shape(self, in_shape):
        s = self.conv.out_shape(in_shape)
        if s[:2] != in_shape[:2]:
            raise ShapeError(f"densecat conv must preserve spatial dims, {in_shape} -> {s}")
        return (in_shape[0], in_shape[1], in_shape[2] + s[2])

    def forward(self, x):
        h, c = self.conv.forward(x)
        a, m = self._relu.forward(h)
        return np.concatenate([x, a], axis=-1), (c, m, x.shape[-1])

    def backward(self, dy, cache):
        c, m, c_in = cache
        dx_direct = dy[..., :c_in]
        da = dy[..., c_in:]
        dh, _ = self._relu.backward(da, m)
        dx_branch, g = self.conv.backward(dh, c)
        return np.ascontiguousarray(dx_direct) + dx_branch, g

    def params(self):
        return self.conv.params()

    def spec(self):
        return {
            "kind": self.kind,
            "c_in": self.conv.kernel.shape[2],
            "growth": self.conv.kernel.shape[3],
            "k": self.conv.kernel.shape[0],
        }


def layer_from_spec(spec: dict, dtype=DEFAULT_DTYPE) -> Layer:
    kind = spec["kind"]
    if kind == "conv2d":
        kernel = np.zeros((spec["k"], spec["k"], spec["c_in"], spec["c_out"]), dtype=dtype)
        bias = np.zeros(spec["c_out"], dtype=dtype)
        return Conv2d(kernel, bias, spec["stride"], spec["padding"])
    if kind == "maxpool2d":
        return MaxPool2d(spec["size"])
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    if kind == "dense":
        return Dense(
            np.zeros((spec["d_in"], spec["d_out"]), dtype=dtype),
            np.zeros(spec["d_out"], dtype=dtype),
        )
    if kind == "residual":
        block = ResidualBlock.init(spec["channels"], spec["k"], dtype=dtype)
        return block
    if kind == "densecat":
        return DenseCatBlock.init(spec["c_in"], spec["growth"], spec["k"], dtype=dtype)
    raise ValueError(f"unknown layer kind {kind!r}")


# ---------------------------------------------------------------------------
# model


class Model:
    """An ordered layer stack with a fixed input shape and class count.

    Read-only during inference and attacks (thread-safe to share); training
    mutates parameters in place and must own the instance.
    """

    def __init__(self, layers: Sequence[Layer], input_shape, num_classes: int, arch: str = "custom"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.arch = arch
        out = self.validate()
        if out != (num_classes,):
            raise ShapeError(f"model emits {out}, expected ({num_classes},) logits")

    def validate(self):
        """Statically compose the declared shapes; raises ShapeError on mismatch."""
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from e
        return shape

    @property
    def dtype(self):
        for layer in self.layers:
            for p in layer.params():
                return p.dtype
        return DEFAULT_DTYPE

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def astype(self, dtype) -> "Model":
        """Copy with parameters cast to dtype (float64 = oracle mode)."""
        clone = Model.__new__(Model)
        clone.input_shape = self.input_shape
        clone.num_classes = self.num_classes
        clone.arch = self.arch
        clone.layers = []
        for layer in self.layers:
            fresh = layer_from_spec(layer.spec(), dtype=dtype)
            for dst, src in zip(fresh.params(), layer.params()):
                dst[...] = src.astype(dtype)
            clone.layers.append(fresh)
        return clone

    def copy(self) -> "Model":
        return self.astype(self.dtype)

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]


def forward(model: Model, batch: np.ndarray) -> tuple[np.ndarray, GradientTape]:
    """Run the stack on an N x H x W x C batch; returns logits and the tape."""
    if batch.ndim != 4 or batch.shape[1:] != model.input_shape:
        raise ShapeError(f"batch shape {batch.shape} does not match model input {model.input_shape}")
    for p in model.parameters():
        _check_finite(p, "model parameters")
    x = batch.astype(model.dtype, copy=False)
    tape = GradientTape()
    for layer in model.layers:
        x, cache = layer.forward(x)
        tape.push(cache)
    return x, tape


def backward(model: Model, tape: GradientTape, dlogits: np.ndarray, need_input_grad: bool = True):
    """One reverse pass over a used tape.

    Returns (dinput, grads) where grads is a flat list aligned with
    model.parameters(). With need_input_grad=False the pass stops at the
    earliest parametered layer (dinput comes back None); training uses this,
    attacks need the full pass.
    """
    first_param = next((i for i, l in enumerate(model.layers) if l.params()), len(model.layers))
    grads_rev = []
    dy = dlogits
    for i in range(len(model.layers) - 1, -1, -1):
        layer, cache = model.layers[i], tape.caches[i]
        if not need_input_grad and i == first_param:
            grads_rev.append(layer.param_backward(dy, cache))
            dy = None
            break
        dy, g = layer.backward(dy, cache)
        grads_rev.append(g)
    grads = []
    for g in reversed(grads_rev):
        grads.extend(g)
    return dy, grads


# ---------------------------------------------------------------------------
# loss


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], max-subtracted for stability."""
    logits = np.asarray(logits).reshape(-1)
    _check_finite(logits, "logits")
    if not 0 <= label < logits.shape[0]:
        raise IndexError(f"label {label} out of range for {logits.shape[0]} classes")
    return float(-log_softmax(logits)[label])


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Per-example losses and dloss/dlogits for a batch (sum-of-losses gradient
    scale: caller divides by whatever weighting it wants)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise IndexError(f"labels out of range for {logits.shape[1]} classes")
    ls = log_softmax(logits)
    n = logits.shape[0]
    losses = -ls[np.arange(n), labels]
    dlogits = np.exp(ls)
    dlogits[np.arange(n), labels] -= 1.0
    return losses, dlogits


def loss_and_input_gradient(model: Model, image: np.ndarray, label: int):
    """Cross-entropy loss of one image and its gradient w.r.t. the pixels."""
    losses, grads = loss_and_input_gradient_batch(model, image[None], np.array([label]))
    return float(losses[0]), grads[0]


def loss_and_input_gradient_batch(model: Model, images: np.ndarray, labels: np.ndarray):
    """Vectorised per-example losses and input gradients (no mean reduction)."""
    logits, tape = forward(model, images)
    losses, dlogits = cross_entropy_batch(logits, labels)
    dinput, _ = backward(model, tape, dlogits.astype(model.dtype, copy=False))
    return losses, dinput


def finite_difference_gradient(model: Model, image: np.ndarray, label: int, h: float = 1e-3) -> np.ndarray:
    """Central-difference input gradient; the independent oracle for backward()."""
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    image = np.asarray(image)
    grad = np.zeros(image.shape, dtype=np.float64)
    flat = grad.reshape(-1)
    base = image.astype(np.float64).reshape(-1)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + h
        lo_plus = _loss_of(model, bumped.reshape(image.shape), label)
        bumped[i] = base[i] - h
        lo_minus = _loss_of(model, bumped.reshape(image.shape), label)
        flat[i] = (lo_plus - lo_minus) / (2.0 * h)
    return grad


def _loss_of(model: Model, image: np.ndarray, label: int) -> float:
    logits, _ = forward(model, image[None])
    return softmax_cross_entropy(logits[0], label)


# ---------------------------------------------------------------------------
# checkpoint io: magic "RTCM", u16 version, layer specs, little-endian f32 payload


def save_model(model: Model, path) -> None:
    header = {
        "arch": model.arch,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "layers": model.specs(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate([p.astype("<f4").reshape(-1) for p in model.parameters()]) if model.parameters() else np.zeros(0, "<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload.tobytes())
    sidecar = {
        "format": "rtcm",
        "version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "param_count": model.param_count(),
        "layers": model.specs(),
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)


def load_model(path) -> Model:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a model checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = np.frombuffer(f.read(), dtype="<f4")
    layers = [layer_from_spec(s, dtype=DEFAULT_DTYPE) for s in header["layers"]]
    model = Model(layers, tuple(header["input_shape"]), header["num_classes"], header["arch"])
    offset = 0
    for p in model.parameters():
        p[...] = payload[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    if offset != payload.size:
        raise ValueError(f"checkpoint payload has {payload.size} values, model needs {offset}")
    return model
