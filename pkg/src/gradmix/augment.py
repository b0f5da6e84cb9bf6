"""Contrastive view generation and mixing augmentations.

All randomness comes from an explicit ``numpy.random.Generator`` (or an int
seed turned into one), so a fixed seed reproduces every batch bit for bit.
Images are N x C x S x S arrays with values in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attribution import AttributionMap, peak_location
from .autodiff import bilinear_resize
from .losses import GAMMA_MAX, GAMMA_MIN


def as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


@dataclass
class ViewConfig:
    crop_scale: tuple[float, float] = (0.2, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    flip_p: float = 0.5
    jitter_p: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    gray_p: float = 0.2


@dataclass
class ViewBatch:
    originals: np.ndarray
    view_a: np.ndarray
    view_b: np.ndarray

    def paired(self) -> np.ndarray:
        """2N batch: view_a rows then view_b rows (row i pairs with i + N)."""
        return np.concatenate([self.view_a, self.view_b], axis=0)


def _crop_box(rng, size, cfg):
    area = size * size
    log_lo, log_hi = math.log(cfg.crop_ratio[0]), math.log(cfg.crop_ratio[1])
    for _ in range(10):
        target = area * rng.uniform(*cfg.crop_scale)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(target * ratio)))
        h = int(round(math.sqrt(target / ratio)))
        if 0 < w <= size and 0 < h <= size:
            top = int(rng.integers(0, size - h + 1))
            left = int(rng.integers(0, size - w + 1))
            return top, left, h, w
    return 0, 0, size, size


def _one_view(img, rng, cfg):
    size = img.shape[-1]
    top, left, h, w = _crop_box(rng, size, cfg)
    out = bilinear_resize(img[:, top:top + h, left:left + w], (size, size))
    if rng.random() < cfg.flip_p:
        out = out[:, :, ::-1]
    if rng.random() < cfg.jitter_p:
        b = rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)
        c = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)
        out = np.clip(out * b, 0, 1)
        mean = out.mean()
        out = np.clip((out - mean) * c + mean, 0, 1)
    if rng.random() < cfg.gray_p:
        out = np.broadcast_to(out.mean(axis=0, keepdims=True), out.shape)
    return np.clip(out, 0, 1)


def standard_views(images: np.ndarray, rng, config: ViewConfig | None = None) -> ViewBatch:
    """Two independently augmented views per image (crop, flip, jitter, grayscale)."""
    rng = as_rng(rng)
    cfg = config or ViewConfig()
    images = np.asarray(images)
    a = np.empty_like(images)
    b = np.empty_like(images)
    for i, img in enumerate(images):
        a[i] = _one_view(img, rng, cfg)
        b[i] = _one_view(img, rng, cfg)
    return ViewBatch(images, a, b)


# -- GradMix ----------------------------------------------------------------

@dataclass
class MaskSpec:
    gamma: float
    center: tuple[int, int]
    side: int
    rect: tuple[int, int, int, int]  # top, left, bottom, right (exclusive)
    donor: int = -1

    @property
    def area(self) -> int:
        return (self.rect[2] - self.rect[0]) * (self.rect[3] - self.rect[1])


def sample_gamma(rng, low: float = GAMMA_MIN, high: float = GAMMA_MAX) -> float:
    return float(as_rng(rng).uniform(low, high))


def mask_side(gamma: float, size: int) -> int:
    return int(math.floor(gamma * size + 0.5))


def square_rect(center, side: int, size: int) -> tuple[int, int, int, int]:
    """Square of ``side`` centred at ``center``, shifted (not shrunk) into the image."""
    top = min(max(center[0] - side // 2, 0), size - side)
    left = min(max(center[1] - side // 2, 0), size - side)
    return top, left, top + side, left + side


def _pick_donor(rng, n, i):
    j = int(rng.integers(0, n - 1))
    return j + 1 if j >= i else j


def gradmix(images: np.ndarray, maps, gamma: float, rng) -> tuple[np.ndarray, list[MaskSpec]]:
    """Patch a resized random batch-mate over each image's most activated square.

    One ``gamma`` is shared by the whole batch; the square side is
    ``round(gamma * S)``.
    """
    rng = as_rng(rng)
    images = np.asarray(images)
    values = maps.values if isinstance(maps, AttributionMap) else np.asarray(maps)
    n, _, size, _ = images.shape
    if n < 2:
        raise ValueError("gradmix needs a batch of at least 2 images (no donor otherwise)")
    if values.shape != (n, size, size):
        raise ValueError(f"maps must have shape {(n, size, size)}, got {values.shape}")
    if not GAMMA_MIN <= gamma <= GAMMA_MAX:
        raise ValueError(f"gamma must lie in [{GAMMA_MIN}, {GAMMA_MAX}], got {gamma}")
    side = mask_side(gamma, size)
    out = images.copy()
    specs = []
    for i in range(n):
        center = peak_location(values[i])
        top, left, bottom, right = square_rect(center, side, size)
        j = _pick_donor(rng, n, i)
        out[i, :, top:bottom, left:right] = bilinear_resize(images[j], (side, side))
        specs.append(MaskSpec(gamma, center, side, (top, left, bottom, right), j))
    return out, specs


# -- baselines --------------------------------------------------------------

@dataclass
class MixInfo:
    labels_a: np.ndarray | None
    labels_b: np.ndarray | None
    ratio: float  # share of each output image taken from the partner image


def mixup(batch: np.ndarray, labels, alpha: float, rng, lam: float | None = None):
    """x' = lam * x_i + (1 - lam) * x_perm(i), lam ~ Beta(alpha, alpha)."""
    rng = as_rng(rng)
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    batch = np.asarray(batch)
    lam = float(rng.beta(alpha, alpha)) if lam is None else float(lam)
    perm = rng.permutation(len(batch))
    mixed = lam * batch + (1 - lam) * batch[perm]
    mixed = np.minimum(np.maximum(mixed, np.minimum(batch, batch[perm])), np.maximum(batch, batch[perm]))
    labels = None if labels is None else np.asarray(labels)
    return mixed.astype(batch.dtype), MixInfo(labels, None if labels is None else labels[perm], 1 - lam)


def cutmix(batch: np.ndarray, labels, alpha: float, rng, lam: float | None = None):
    """Paste a resized partner image into one clipped box of area ~ (1 - lam)."""
    rng = as_rng(rng)
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    batch = np.asarray(batch)
    n, _, h, w = batch.shape
    lam = float(rng.beta(alpha, alpha)) if lam is None else float(lam)
    perm = rng.permutation(n)
    cut = math.sqrt(1 - lam)
    ch, cw = int(h * cut), int(w * cut)
    cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
    top, bottom = np.clip([cy - ch // 2, cy + ch - ch // 2], 0, h)
    left, right = np.clip([cx - cw // 2, cx + cw - cw // 2], 0, w)
    mixed = batch.copy()
    if bottom > top and right > left:
        for i in range(n):
            mixed[i, :, top:bottom, left:right] = bilinear_resize(batch[perm[i]], (bottom - top, right - left))
    ratio = (bottom - top) * (right - left) / (h * w)
    labels = None if labels is None else np.asarray(labels)
    info = MixInfo(labels, None if labels is None else labels[perm], float(ratio))
    return mixed, info


def cutout(batch: np.ndarray, size: int, rng) -> np.ndarray:
    """Zero one ``size`` x ``size`` square per image (uniform centre, shifted inside)."""
    rng = as_rng(rng)
    batch = np.asarray(batch)
    side = batch.shape[-1]
    if size > side:
        raise ValueError(f"cutout size {size} exceeds image side {side}")
    out = batch.copy()
    if size <= 0:
        return out
    for i in range(len(out)):
        center = (int(rng.integers(0, side)), int(rng.integers(0, side)))
        top, left, bottom, right = square_rect(center, size, side)
        out[i, :, top:bottom, left:right] = 0
    return out
