"""Attribution map export: float grids, grayscale images and activated-area curves."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..attribution import activated_fraction, aggregate, gradcam, layercam
from ..augment import standard_views
from ..autodiff import Graph, backward, tap_gradients
from ..encoder import Encoder
from .config import RunConfig
from .train import clean_objective

DEFAULT_THRESHOLDS = tuple(float(t) for t in np.geomspace(1e-5, 1e-3, 5))


def write_pgm(values: np.ndarray, path) -> Path:
    """8-bit binary PGM, min-max scaled (a constant map is written black)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    scaled = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    pixels = np.round(scaled * 255).astype(np.uint8)
    path = Path(path)
    h, w = pixels.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


def write_grid(values: np.ndarray, path) -> Path:
    np.savetxt(path, np.asarray(values, dtype=np.float64), fmt="%.8e")
    return Path(path)


def compute_maps(config: RunConfig, encoder: Encoder, images, labels, layers=None, seed: int = 0):
    """Per-layer raw maps and the aggregated map for ``images``.

    The loss is the configured clean objective on [images; augmented partner
    views], as in training.
    """
    layers = list(layers or config.encoder.tap_names)
    images = np.asarray(images, dtype=encoder.dtype)
    labels = np.asarray(labels)
    partners = standard_views(images, np.random.default_rng(seed)).view_b
    g = Graph(encoder.dtype)
    out = encoder.forward(g, np.concatenate([images, partners]), training=True, update_stats=False, tap=layers)
    loss = clean_objective(config, out, np.concatenate([labels, labels]))
    backward(g, loss, accumulate=False)
    taps = tap_gradients(g, layers).select(slice(0, len(images)))
    fn = layercam if config.attribution_method == "layercam" else gradcam
    per_layer = {name: fn(taps, name) for name in layers}
    agg = aggregate(list(per_layer.values()), images.shape[-1])
    return per_layer, agg


def export_attribution(config: RunConfig, encoder: Encoder, images, labels, out_dir, layers=None,
                       thresholds=DEFAULT_THRESHOLDS, seed: int = 0) -> dict:
    """Write per-layer and aggregated maps for each image; return the export report."""
    start = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    thresholds = sorted(float(t) for t in thresholds)
    with threadpool_limits(limits=config.threads):
        per_layer, agg = compute_maps(config, encoder, images, labels, layers, seed)
    entries = []
    for i in range(len(images)):
        maps = {name: m.values[i] for name, m in per_layer.items()}
        maps["aggregate"] = agg.values[i]
        for name, values in maps.items():
            stem = out_dir / f"img{i:04d}_{name}"
            write_grid(values, stem.with_suffix(".txt"))
            write_pgm(values, stem.with_suffix(".pgm"))
            entries.append({
                "image": i,
                "map": name,
                "shape": list(values.shape),
                "files": [stem.with_suffix(".txt").name, stem.with_suffix(".pgm").name],
                "activated_fraction": [float(v) for v in activated_fraction(values, thresholds)],
            })
    return {
        "kind": "export",
        "layers": list(per_layer),
        "method": config.attribution_method,
        "thresholds": thresholds,
        "maps": entries,
        "directory": str(out_dir),
        "config": config.to_dict(),
        "wall_clock_seconds": time.perf_counter() - start,
    }
