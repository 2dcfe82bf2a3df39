"""Feature-engineering solvers: HOG descriptor, nearest-neighbour, linear
SVM (one-vs-rest hinge, stochastic subgradient) and a bootstrap random
forest. All deterministic under their seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .imgio import luma

KINDS = ("knn", "linear_svm", "random_forest")
DESCRIPTORS = ("raw_pixels", "hog")

CELL = 8
BINS = 9
BLOCK = 2


def hog_descriptor(image: np.ndarray) -> np.ndarray:
    """9 unsigned orientation bins, 8x8 cells, L2-normalised 2x2 blocks."""
    gray = luma(image.astype(np.float64)) if image.ndim == 3 else image.astype(np.float64)
    h, w = gray.shape
    if h < CELL or w < CELL:
        raise ValueError(f"image {h}x{w} smaller than one {CELL}x{CELL} cell")
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, 1:-1] = gray[:, 2:] - gray[:, :-2]
    gy[1:-1, :] = gray[2:, :] - gray[:-2, :]
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.minimum((ang / (180.0 / BINS)).astype(int), BINS - 1)

    ch, cw = h // CELL, w // CELL
    cells = np.zeros((ch, cw, BINS))
    ys, xs = np.mgrid[0 : ch * CELL, 0 : cw * CELL]
    np.add.at(cells, (ys // CELL, xs // CELL, bins[: ch * CELL, : cw * CELL]), mag[: ch * CELL, : cw * CELL])

    out = []
    for by in range(ch - BLOCK + 1):
        for bx in range(cw - BLOCK + 1):
            block = cells[by : by + BLOCK, bx : bx + BLOCK].ravel()
            norm = np.sqrt((block**2).sum())
            out.append(block / norm if norm > 1e-12 else block)
    return np.concatenate(out)


def _featurize(image: np.ndarray, descriptor: str) -> np.ndarray:
    if descriptor == "raw_pixels":
        return image.astype(np.float64).ravel()
    if descriptor == "hog":
        return hog_descriptor(image)
    raise ValueError(f"unknown descriptor {descriptor!r}; choose from {DESCRIPTORS}")


class ShallowModel:
    """predict(image) -> (class id, score vector); subclasses fill _scores."""

    kind = "?"

    def __init__(self, descriptor: str, class_count: int):
        self.descriptor = descriptor
        self.class_count = class_count

    def predict(self, image: np.ndarray):
        scores = self._scores(_featurize(image, self.descriptor))
        return int(np.argmax(scores)), scores

    def _scores(self, feat: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class KnnModel(ShallowModel):
    kind = "knn"

    def __init__(self, descriptor, class_count, features, labels, k=5):
        super().__init__(descriptor, class_count)
        self.features = features
        self.labels = labels
        self.k = k

    def _scores(self, feat):
        d = np.sqrt(((self.features - feat) ** 2).sum(axis=1))
        nearest = np.argsort(d, kind="stable")[: self.k]
        weights = 1.0 / (d[nearest] + 1e-9)
        scores = np.zeros(self.class_count)
        np.add.at(scores, self.labels[nearest], weights)
        return scores / scores.sum()


class LinearSvmModel(ShallowModel):
    """One-vs-rest hinge loss; scores are the raw margins."""

    kind = "linear_svm"

    def __init__(self, descriptor, class_count, weight, bias, feature_scale=1.0):
        super().__init__(descriptor, class_count)
        self.weight = weight  # D x C
        self.bias = bias
        self.feature_scale = feature_scale  # training-set RMS, applied at predict too

    def _scores(self, feat):
        return (feat / self.feature_scale) @ self.weight + self.bias


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    prediction: int = 0


class RandomForestModel(ShallowModel):
    kind = "random_forest"

    def __init__(self, descriptor, class_count, trees):
        super().__init__(descriptor, class_count)
        self.trees = trees  # list of arrays (nodes, 5): feature, threshold, left, right, prediction

    def _scores(self, feat):
        votes = np.zeros(self.class_count)
        for nodes in self.trees:
            i = 0
            while nodes[i, 0] >= 0:
                i = int(nodes[i, 2] if feat[int(nodes[i, 0])] <= nodes[i, 1] else nodes[i, 3])
            votes[int(nodes[i, 4])] += 1
        return votes / votes.sum()


def _gini_best_split(X, y, feature_ids, class_count):
    """Best (feature, threshold, gini) over candidate features; None if unsplittable."""
    n = len(y)
    best = None
    counts_total = np.bincount(y, minlength=class_count).astype(np.float64)
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        onehot = np.zeros((n, class_count))
        onehot[np.arange(n), ys] = 1.0
        left_counts = np.cumsum(onehot, axis=0)[:-1]
        right_counts = counts_total - left_counts
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        gl = 1.0 - ((left_counts / nl[:, None]) ** 2).sum(axis=1)
        gr = 1.0 - ((right_counts / nr[:, None]) ** 2).sum(axis=1)
        gini = (nl * gl + nr * gr) / n
        gini[~valid] = np.inf
        i = int(np.argmin(gini))
        if best is None or gini[i] < best[2]:
            best = (f, (xs[i] + xs[i + 1]) / 2.0, float(gini[i]))
    return best


def _grow_tree(X, y, class_count, max_depth, rng, max_features):
    nodes = []

    def recurse(idx, depth):
        node_id = len(nodes)
        nodes.append([-1, 0.0, -1, -1, 0])
        counts = np.bincount(y[idx], minlength=class_count)
        nodes[node_id][4] = int(np.argmax(counts))
        if depth >= max_depth or len(idx) < 2 or counts.max() == len(idx):
            return node_id
        feats = rng.choice(X.shape[1], size=min(max_features, X.shape[1]), replace=False)
        split = _gini_best_split(X[idx], y[idx], feats, class_count)
        if split is None:
            return node_id
        f, thr, _ = split
        mask = X[idx, f] <= thr
        if mask.all() or not mask.any():
            return node_id
        nodes[node_id][0] = int(f)
        nodes[node_id][1] = float(thr)
        nodes[node_id][2] = recurse(idx[mask], depth + 1)
        nodes[node_id][3] = recurse(idx[~mask], depth + 1)
        return node_id

    recurse(np.arange(len(y)), 0)
    return np.array(nodes, dtype=np.float64)


def train_shallow(kind: str, descriptor: str, data: Dataset, hyper: dict | None = None) -> ShallowModel:
    """Fit one shallow solver; hyper keys depend on the kind (see defaults)."""
    hyper = dict(hyper or {})
    if kind not in KINDS:
        raise ValueError(f"unknown shallow kind {kind!r}; choose from {KINDS}")
    X = np.stack([_featurize(img, descriptor) for img, _ in data.items])
    y = data.labels()
    classes_present = np.unique(y)
    if kind == "knn":
        return KnnModel(descriptor, data.class_count, X, y, k=hyper.get("k", 5))
    if len(classes_present) < 2:
        raise ValueError(f"{kind} needs at least two classes, got {len(classes_present)}")
    if kind == "linear_svm":
        return _train_svm(X, y, descriptor, data.class_count, hyper)
    return _train_forest(X, y, descriptor, data.class_count, hyper)


def _train_svm(X, y, descriptor, class_count, hyper):
    epochs = hyper.get("epochs", 10)
    lr = hyper.get("learning_rate", 0.5)
    reg = hyper.get("regularization", 1e-4)
    batch = hyper.get("batch_size", 32)
    seed = hyper.get("seed", 0)
    # unit-RMS features keep the subgradient steps scale-free
    scale = float(np.sqrt((X**2).sum(axis=1)).mean()) or 1.0
    X = X / scale
    d = X.shape[1]
    W = np.zeros((d, class_count))
    b = np.zeros(class_count)
    targets = -np.ones((len(y), class_count))
    targets[np.arange(len(y)), y] = 1.0
    step_no = 0
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch):
            step_no += 1
            eta = lr / np.sqrt(step_no)
            idx = order[start : start + batch]
            xb, tb = X[idx], targets[idx]
            margins = tb * (xb @ W + b)
            active = (margins < 1.0).astype(np.float64)
            coeff = tb * active / len(idx)
            W -= eta * (reg * W - xb.T @ coeff)
            b -= eta * (-coeff.sum(axis=0))
    return LinearSvmModel(descriptor, class_count, W, b, scale)


def _train_forest(X, y, descriptor, class_count, hyper):
    n_trees = hyper.get("trees", 100)
    max_depth = hyper.get("max_depth", 12)
    seed = hyper.get("seed", 0)
    bootstrap = hyper.get("bootstrap", True)
    max_features = hyper.get("max_features") or max(1, int(np.sqrt(X.shape[1])))
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        idx = rng.integers(0, len(y), size=len(y)) if bootstrap else np.arange(len(y))
        trees.append(_grow_tree(X[idx], y[idx], class_count, max_depth, rng, max_features))
    return RandomForestModel(descriptor, class_count, trees)


# ---------------------------------------------------------------------------
# serialization: versioned npz payload + JSON sidecar

_SHALLOW_VERSION = 1


def save_shallow(model: ShallowModel, path) -> None:
    arrays = {}
    meta = {
        "version": _SHALLOW_VERSION,
        "kind": model.kind,
        "descriptor": model.descriptor,
        "class_count": model.class_count,
    }
    if isinstance(model, KnnModel):
        arrays = {"features": model.features, "labels": model.labels}
        meta["k"] = model.k
    elif isinstance(model, LinearSvmModel):
        arrays = {"weight": model.weight, "bias": model.bias}
        meta["feature_scale"] = model.feature_scale
    elif isinstance(model, RandomForestModel):
        arrays = {f"tree_{i}": t for i, t in enumerate(model.trees)}
        meta["n_trees"] = len(model.trees)
    np.savez(path, **arrays)
    with open(str(path) + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_shallow(path) -> ShallowModel:
    with open(str(path) + ".json") as f:
        meta = json.load(f)
    if meta["version"] != _SHALLOW_VERSION:
        raise ValueError(f"unsupported shallow model version {meta['version']}")
    npz_path = str(path) if str(path).endswith(".npz") else str(path) + ".npz"
    data = np.load(npz_path)
    if meta["kind"] == "knn":
        return KnnModel(meta["descriptor"], meta["class_count"], data["features"], data["labels"], meta["k"])
    if meta["kind"] == "linear_svm":
        return LinearSvmModel(meta["descriptor"], meta["class_count"], data["weight"], data["bias"],
                              meta.get("feature_scale", 1.0))
    trees = [data[f"tree_{i}"] for i in range(meta["n_trees"])]
    return RandomForestModel(meta["descriptor"], meta["class_count"], trees)
