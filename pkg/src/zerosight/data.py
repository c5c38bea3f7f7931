"""Datasets on disk, zero-shot class splits, synthetic data and batch sampling."""
from __future__ import annotations

import colorsys
import csv
import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError
from .serialization import load_ten, save_ten

SHAPES = ("disk", "bar", "cross", "ring")
N_HUES = 8
POSITION_GRID = 3


# -- splits ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    mode: str
    seed: int
    train_classes: tuple
    test_classes: tuple
    train_indices: tuple
    test_indices: tuple
    test_seen: tuple  # per test index: True when the sample belongs to a training class

    @property
    def test_seen_mask(self) -> np.ndarray:
        return np.asarray(self.test_seen, dtype=bool)


def make_split(labels, mode: str = "zsl", seed: int = 0) -> SplitSpec:
    """Partition classes 50/50 into train and test (unseen) classes.

    In ``gzsl`` mode half of every training class's samples are held out into
    the test set as seen-class queries.
    """
    if mode not in ("zsl", "gzsl"):
        raise ConfigurationError(f"split mode must be 'zsl' or 'gzsl', got {mode!r}")
    labels = np.asarray(labels).ravel()
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ConfigurationError("a split needs at least two classes")
    rng = np.random.default_rng(seed)
    shuffled = classes[rng.permutation(len(classes))]
    half = len(classes) // 2
    train_cls = sorted(int(c) for c in shuffled[:half])
    test_cls = sorted(int(c) for c in shuffled[half:])

    train_idx, seen_idx = [], []
    for c in train_cls:
        members = np.flatnonzero(labels == c)
        if mode == "gzsl":
            if len(members) < 2:
                raise ConfigurationError(f"class {c} needs >= 2 samples for a GZSL split")
            members = members[rng.permutation(len(members))]
            keep = len(members) - len(members) // 2
            train_idx.extend(sorted(members[:keep].tolist()))
            seen_idx.extend(sorted(members[keep:].tolist()))
        else:
            train_idx.extend(members.tolist())
    unseen_idx = np.flatnonzero(np.isin(labels, test_cls)).tolist()
    test_idx = sorted(seen_idx + unseen_idx)
    seen_set = set(seen_idx)
    return SplitSpec(mode, seed, tuple(train_cls), tuple(test_cls), tuple(sorted(train_idx)),
                     tuple(test_idx), tuple(i in seen_set for i in test_idx))


# -- datasets on disk ------------------------------------------------------

class ImageDataset:
    """A directory of ``images/<index>.ten`` files indexed by ``labels.csv``."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "labels.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found")
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        self.indices = np.array([int(r["index"]) for r in rows], dtype=np.int64)
        self.labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
        if not np.array_equal(self.indices, np.arange(len(rows))):
            raise ConfigurationError(f"{path}: indices must run 0..N-1 in order")

    def __len__(self):
        return len(self.labels)

    def path(self, index: int) -> Path:
        return self.root / "images" / f"{int(index):05d}.ten"

    def load(self, indices) -> np.ndarray:
        return np.stack([read_image(self.path(i)) for i in indices])


def read_image(path) -> np.ndarray:
    return load_ten(path)


def write_labels_csv(path, labels, seen=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        if seen is None:
            w.writerow(("index", "label"))
            w.writerows((i, int(y)) for i, y in enumerate(labels))
        else:
            w.writerow(("index", "label", "seen"))
            w.writerows((i, int(y), int(bool(s))) for i, (y, s) in enumerate(zip(labels, seen)))


def read_labels_csv(path):
    """Return ``(labels, seen)``; ``seen`` is ``None`` when the column is absent."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    seen = None
    if rows and "seen" in rows[0]:
        seen = np.array([r["seen"].strip().lower() in ("1", "true") for r in rows], dtype=bool)
    return labels, seen


# -- synthetic images --------------------------------------------------------

def class_attributes(n_classes: int, seed: int) -> list[tuple[int, int, int]]:
    """Distinct (hue, shape, position) triples, one per class."""
    combos = list(itertools.product(range(N_HUES), range(len(SHAPES)), range(POSITION_GRID ** 2)))
    if n_classes > len(combos):
        raise ConfigurationError(
            f"{n_classes} classes requested but only {len(combos)} attribute combinations exist "
            f"({N_HUES} hues x {len(SHAPES)} shapes x {POSITION_GRID ** 2} positions)")
    order = np.random.default_rng(seed).permutation(len(combos))
    return [combos[i] for i in order[:n_classes]]


def _shape_mask(shape: str, size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    r = np.sqrt(dy * dy + dx * dx)
    half = radius * 0.35
    if shape == "disk":
        return r <= radius
    if shape == "ring":
        return (r <= radius) & (r >= radius * 0.55)
    if shape == "bar":
        return (np.abs(dy) <= half) & (np.abs(dx) <= radius * 1.2)
    return ((np.abs(dy) <= half) & (np.abs(dx) <= radius)) | ((np.abs(dx) <= half) & (np.abs(dy) <= radius))


def render(attrs, size: int, rng: np.random.Generator) -> np.ndarray:
    """One 3 x size x size float32 image for a (hue, shape, position) triple."""
    hue, shape, pos = attrs
    rgb = np.array(colorsys.hsv_to_rgb(hue / N_HUES, 0.9, 0.95))
    cell = size / POSITION_GRID
    jitter = size / 16
    cy = (pos // POSITION_GRID + 0.5) * cell + rng.uniform(-jitter, jitter)
    cx = (pos % POSITION_GRID + 0.5) * cell + rng.uniform(-jitter, jitter)
    radius = cell * rng.uniform(0.38, 0.48)
    mask = _shape_mask(SHAPES[shape], size, cy, cx, radius)
    background = 0.25 + 0.05 * rng.standard_normal(3)
    img = np.empty((3, size, size))
    for ch in range(3):
        img[ch] = np.where(mask, rgb[ch] * rng.uniform(0.85, 1.0), background[ch])
    img += 0.08 * rng.standard_normal(img.shape)
    return img.astype(np.float32)


def nearest_centroid_accuracy(images: np.ndarray, labels: np.ndarray) -> float:
    """Pixel-space nearest-centroid accuracy; centroids from the first half of each class."""
    flat = images.reshape(len(images), -1).astype(np.float64)
    classes = np.unique(labels)
    fit_idx, test_idx = [], []
    for c in classes:
        members = np.flatnonzero(labels == c)
        half = max(1, len(members) // 2)
        fit_idx.append(members[:half])
        test_idx.append(members[half:] if len(members) > 1 else members)
    centroids = np.stack([flat[f].mean(axis=0) for f in fit_idx])
    test = np.concatenate(test_idx)
    d = ((flat[test][:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return float((classes[np.argmin(d, axis=1)] == labels[test]).mean())


def synth_gen(n_classes: int, samples_per_class: int, image_size: int, seed: int, out_dir,
              min_accuracy: float = 0.9) -> dict:
    """Write a procedural dataset to ``out_dir`` and return its metadata.

    Class identity is carried by coarse attributes (hue, blob shape, blob
    position); every sample adds jitter and high-frequency noise.
    """
    if image_size < 16:
        raise ConfigurationError(f"image_size must be >= 16, got {image_size}")
    if n_classes < 1 or samples_per_class < 1:
        raise ConfigurationError("need at least one class and one sample per class")
    attrs = class_attributes(n_classes, seed)
    rng = np.random.default_rng([seed, 1])
    labels = np.repeat(np.arange(n_classes), samples_per_class)
    images = np.stack([render(attrs[c], image_size, rng) for c in labels])

    accuracy = nearest_centroid_accuracy(images, labels)
    if accuracy < min_accuracy:
        raise ConfigurationError(
            f"generated classes are not separable enough: nearest-centroid accuracy {accuracy:.3f} < {min_accuracy}")

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        save_ten(out / "images" / f"{i:05d}.ten", img)
    write_labels_csv(out / "labels.csv", labels)
    meta = {
        "classes": n_classes,
        "samples_per_class": samples_per_class,
        "image_size": image_size,
        "seed": seed,
        "attributes": [{"hue": h, "shape": SHAPES[s], "position": p} for h, s, p in attrs],
        "nearest_centroid_accuracy": accuracy,
    }
    with open(out / "dataset.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return meta


# -- batching ----------------------------------------------------------------

class PKSampler:
    """Class-balanced batches of P classes x K samples each.

    Each class keeps its own shuffled queue that is refilled when exhausted,
    so every sample is visited before any repeats.
    """

    def __init__(self, labels, p: int = 4, k: int = 4, seed: int = 0):
        self.labels = np.asarray(labels).ravel()
        self.classes = np.unique(self.labels)
        if p < 2:
            raise ConfigurationError("P must be >= 2 so every batch has a negative proxy")
        if p > len(self.classes):
            raise ConfigurationError(f"P={p} exceeds the {len(self.classes)} available classes")
        self.p, self.k = p, k
        self.rng = np.random.default_rng(seed)
        self._members = {int(c): np.flatnonzero(self.labels == c) for c in self.classes}
        small = min(len(m) for m in self._members.values())
        if k < 1 or k > small:
            raise ConfigurationError(f"K={k} must lie in [1, {small}] (smallest class size)")
        self._queues = {c: [] for c in self._members}

    def steps_per_epoch(self) -> int:
        return max(1, len(self.labels) // (self.p * self.k))

    def _take(self, c: int) -> list:
        q = self._queues[c]
        if len(q) < self.k:
            m = self._members[c]
            q.extend(m[self.rng.permutation(len(m))].tolist())
        taken, self._queues[c] = q[: self.k], q[self.k :]
        return taken

    def epoch(self) -> list[np.ndarray]:
        batches = []
        for _ in range(self.steps_per_epoch()):
            chosen = self.classes[self.rng.choice(len(self.classes), size=self.p, replace=False)]
            batches.append(np.array([i for c in chosen for i in self._take(int(c))], dtype=np.int64))
        return batches
