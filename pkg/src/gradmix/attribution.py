"""GradCAM / LayerCAM maps from tapped activations, layer aggregation, peak picking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import FeatureTaps, bilinear_resize


@dataclass
class AttributionMap:
    """A batch of nonnegative saliency maps, shape N x H x W."""

    values: np.ndarray
    source_layers: list[str] = field(default_factory=list)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape[-2:]

    def __len__(self) -> int:
        return len(self.values)


def _tap(taps: FeatureTaps, layer: str):
    if layer not in taps:
        raise KeyError(f"no tap for layer {layer!r}; available: {taps.names}")
    act, grad = taps[layer]
    if act.shape != grad.shape or act.ndim != 4:
        raise ValueError(f"{layer}: expected matching N x C x H x W tensors, got {act.shape} / {grad.shape}")
    return act, grad


def gradcam(taps: FeatureTaps, layer: str) -> AttributionMap:
    """ReLU of the channel sum of activations weighted by spatially averaged gradients."""
    act, grad = _tap(taps, layer)
    alpha = grad.mean(axis=(2, 3))
    cam = np.einsum("nc,nchw->nhw", alpha, act)
    return AttributionMap(np.maximum(cam, 0), [layer])


def layercam(taps: FeatureTaps, layer: str) -> AttributionMap:
    """ReLU of the channel sum of ReLU(gradient) * activation, location by location."""
    act, grad = _tap(taps, layer)
    weighted = np.maximum(grad, 0) * act
    return AttributionMap(np.maximum(weighted.sum(axis=1), 0), [layer])


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Per-map min-max scaling to [0, 1]; constant maps become zeros."""
    lo = values.min(axis=(-2, -1), keepdims=True)
    hi = values.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1)
    return np.where(span > 0, (values - lo) / safe, 0).astype(values.dtype)


def aggregate(maps: list[AttributionMap], resolution) -> AttributionMap:
    """Upsample each map to ``resolution``, min-max normalize per sample, and sum."""
    if not maps:
        raise ValueError("aggregate needs at least one map")
    size = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    total = None
    layers: list[str] = []
    for m in maps:
        norm = minmax_normalize(bilinear_resize(m.values, size))
        total = norm if total is None else total + norm
        layers.extend(m.source_layers)
    return AttributionMap(total, layers)


def layer_maps(taps: FeatureTaps, layers, resolution, method: str = "layercam") -> AttributionMap:
    """Aggregated map over ``layers`` at image resolution."""
    fn = {"layercam": layercam, "gradcam": gradcam}[method]
    return aggregate([fn(taps, name) for name in layers], resolution)


def peak_location(values: np.ndarray) -> tuple[int, int]:
    """Row-major argmax of a 2-D map; ties go to the smallest flat index."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"peak_location expects a 2-D map, got shape {values.shape}")
    r, c = np.unravel_index(int(np.argmax(values)), values.shape)
    return int(r), int(c)


def activated_fraction(values: np.ndarray, thresholds) -> np.ndarray:
    """Fraction of map entries strictly above each threshold."""
    values = np.asarray(values)
    return np.array([(values > t).mean() for t in thresholds])
