"""Labeled image datasets and their on-disk manifest format."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .glyphs import CLASS_COUNT
from .imgio import read_rgb, write_rgb


class Dataset:
    """A sequence of (image, label) pairs with one shared image shape."""

    def __init__(self, items, class_count: int = CLASS_COUNT, split: str = "train", meta=None):
        if not items:
            raise ValueError("dataset is empty")
        shape = items[0][0].shape
        for img, label in items:
            if img.shape != shape:
                raise ValueError(f"mixed image shapes {shape} and {img.shape}")
            if not 0 <= label < class_count:
                raise ValueError(f"label {label} out of range for {class_count} classes")
        self.items = list(items)
        self.class_count = class_count
        self.split = split
        self.meta = list(meta) if meta is not None else [{} for _ in items]

    def __len__(self):
        return len(self.items)

    @property
    def image_shape(self):
        return self.items[0][0].shape

    def images(self) -> np.ndarray:
        return np.stack([img for img, _ in self.items])

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.items], dtype=np.int64)

    def subset(self, indices, split=None) -> "Dataset":
        return Dataset(
            [self.items[i] for i in indices],
            self.class_count,
            split or self.split,
            [self.meta[i] for i in indices],
        )

    def replace_images(self, images: np.ndarray, extra_meta: dict | None = None) -> "Dataset":
        items = [(images[i], label) for i, (_, label) in enumerate(self.items)]
        meta = [dict(m, **(extra_meta or {})) for m in self.meta]
        return Dataset(items, self.class_count, self.split, meta)


def save_dataset(ds: Dataset, path, extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (img, label) in enumerate(ds.items):
        fname = f"{i:06d}.png"
        write_rgb(path / fname, img)
        row = {"file": fname, "label": int(label), "split": ds.split}
        row.update(ds.meta[i])
        rows.append(row)
    manifest = {"class_count": ds.class_count, "split": ds.split, "items": rows}
    if extra:
        manifest.update(extra)
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path / "manifest.json") as f:
        manifest = json.load(f)
    items, meta = [], []
    for row in manifest["items"]:
        img = read_rgb(path / row["file"])
        items.append((img, int(row["label"])))
        meta.append({k: v for k, v in row.items() if k not in ("file", "label", "split")})
    return Dataset(items, manifest["class_count"], manifest.get("split", "train"), meta)
