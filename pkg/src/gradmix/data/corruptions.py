"""Seven synthesizable common corruptions at five severities.

Parameter tables are this package's own defaults (monotone in severity);
they are not the values of any published corruption benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..autodiff import bilinear_resize

DEFAULT_TABLE: dict[str, tuple[float, ...]] = {
    "gaussian-noise": (0.04, 0.06, 0.08, 0.10, 0.12),  # noise std
    "shot-noise": (500, 250, 100, 75, 50),  # photon count per unit intensity
    "impulse-noise": (0.01, 0.02, 0.03, 0.05, 0.07),  # salt-and-pepper rate
    "defocus-blur": (0.5, 1.0, 1.5, 2.0, 2.5),  # disk radius in pixels
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),  # additive offset
    "contrast": (0.75, 0.5, 0.4, 0.3, 0.15),  # scale about the image mean
    "pixelate": (1.5, 2.0, 2.5, 3.0, 4.0),  # downsampling factor
}

CORRUPTION_TYPES = tuple(DEFAULT_TABLE)


@dataclass(frozen=True)
class CorruptionSpec:
    type: str
    severity: int
    value: float | None = None  # overrides the table entry

    def parameter(self) -> float:
        if self.type not in DEFAULT_TABLE:
            raise ValueError(f"unknown corruption type {self.type!r}; expected one of {CORRUPTION_TYPES}")
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")
        return DEFAULT_TABLE[self.type][self.severity - 1] if self.value is None else self.value


def disk_kernel(radius: float) -> np.ndarray:
    r = max(int(np.ceil(radius)), 0)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = (xx ** 2 + yy ** 2 <= radius ** 2).astype(np.float64)
    return k / k.sum()


def _pixelate(x, factor):
    size = x.shape[-1]
    small = max(1, int(round(size / factor)))
    down = bilinear_resize(x, (small, small))
    idx = np.minimum((np.arange(size) * small) // size, small - 1)
    return down[..., idx[:, None], idx[None, :]]


def corrupt(images: np.ndarray, spec: CorruptionSpec, seed: int = 0) -> np.ndarray:
    """Apply one corruption to an N x C x H x W batch in [0, 1]; output stays in [0, 1]."""
    p = spec.parameter()
    rng = np.random.default_rng(seed)
    x = np.asarray(images, dtype=np.float64)
    kind = spec.type
    if kind == "gaussian-noise":
        out = x if p == 0 else x + rng.normal(0, p, size=x.shape)
    elif kind == "shot-noise":
        out = rng.poisson(x * p) / p
    elif kind == "impulse-noise":
        out = x.copy()
        u = rng.random(size=x.shape)
        out[u < p / 2] = 0.0
        out[(u >= p / 2) & (u < p)] = 1.0
    elif kind == "defocus-blur":
        k = disk_kernel(p)[None, None]
        out = ndimage.convolve(x, k, mode="reflect") if k.size > 1 else x
    elif kind == "brightness":
        out = x + p
    elif kind == "contrast":
        mean = x.mean(axis=(1, 2, 3), keepdims=True)
        out = (x - mean) * p + mean
    else:  # pixelate
        out = x if p == 1 else _pixelate(x, p)
    return np.clip(out, 0, 1).astype(np.asarray(images).dtype)
