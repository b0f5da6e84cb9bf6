"""Synthetic coloured-blob image datasets for desk-scale runs."""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .formats import ImageDataset, from_uint8, to_uint8


@dataclass
class BlobClassSpec:
    color: tuple[float, float, float]
    color_jitter: float = 0.08
    sigma: tuple[float, float] = (0.10, 0.20)  # blob width as a fraction of the side
    center_margin: float = 0.2
    distractor_p: float = 0.5  # chance of an extra blob in a random colour


def default_class_specs(n_classes: int) -> list[BlobClassSpec]:
    """Evenly spaced saturated hues, one per class."""
    return [BlobClassSpec(colorsys.hsv_to_rgb(c / n_classes, 1.0, 1.0)) for c in range(n_classes)]


def _blob(size, rng, margin, sigma_range):
    cy, cx = rng.uniform(margin * size, (1 - margin) * size, size=2)
    sigma = rng.uniform(*sigma_range) * size
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))


def _render(spec: BlobClassSpec, size, rng):
    img = rng.uniform(0.0, 0.3, size=(3, size, size))
    if rng.random() < spec.distractor_p:
        weight = 0.6 * _blob(size, rng, 0.1, (0.06, 0.12))
        img = img * (1 - weight) + rng.uniform(0, 1, size=3)[:, None, None] * weight
    color = np.clip(np.asarray(spec.color) + rng.normal(0, spec.color_jitter, size=3), 0, 1)
    weight = _blob(size, rng, spec.center_margin, spec.sigma)
    img = img * (1 - weight) + color[:, None, None] * weight
    return img


def synth_blobs(class_specs, image_size: int = 32, n_per_class: int = 100, seed: int = 0) -> ImageDataset:
    """One Gaussian blob in the class colour over a noisy background, optionally
    with a smaller random-colour distractor. Pixels are quantized to 1/255."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c, spec in enumerate(class_specs):
        for _ in range(n_per_class):
            images.append(_render(spec, image_size, rng))
            labels.append(c)
    pixels = to_uint8(np.stack(images))
    names = [f"blob{c}" for c in range(len(class_specs))]
    return ImageDataset(from_uint8(pixels), np.asarray(labels), names)


def synth_train_test(n_classes: int, image_size: int, n_train: int, n_test: int, seed: int = 0):
    """Disjoint train/test draws (the "native" split of a synthetic source)."""
    specs = default_class_specs(n_classes)
    train = synth_blobs(specs, image_size, n_train, seed=2 * seed + 1)
    test = synth_blobs(specs, image_size, n_test, seed=2 * seed + 2)
    return train, test


def nearest_class_mean_accuracy(train: ImageDataset, test: ImageDataset) -> float:
    """Pixel-space nearest-class-mean classifier accuracy (separability audit)."""
    x_tr = train.images.reshape(len(train), -1).astype(np.float64)
    x_te = test.images.reshape(len(test), -1).astype(np.float64)
    classes = np.unique(train.labels)
    means = np.stack([x_tr[train.labels == c].mean(axis=0) for c in classes])
    d = ((x_te[:, None, :] - means[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[np.argmin(d, axis=1)] == test.labels))
