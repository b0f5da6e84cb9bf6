"""Detection, corruption-robustness and linear-probe evaluation of trained encoders."""

from __future__ import annotations

import math
import time

import numpy as np
from threadpoolctl import threadpool_limits

from ..autodiff import Graph, Parameter, backward, ops
from ..data import CORRUPTION_TYPES, CorruptionSpec, Split, corrupt
from ..data.formats import ImageDataset
from ..encoder import Encoder
from ..losses import cross_entropy
from ..metrics import (
    SEVERITIES,
    CorruptionGrid,
    accuracy,
    corruption_aggregates,
    detection_metrics,
    topk_accuracy,
)
from ..scoring import (
    build_bank,
    fit_class_gaussians,
    knn_osr_score,
    mahalanobis_score,
    msp_and_entropy_scores,
)
from .config import RunConfig
from .optim import adam_step

SCORERS = ("knn", "msp", "entropy", "mahalanobis")
DETECTION_METRICS = ("auroc", "tnr_at_tpr95", "dtacc", "auin", "auout")
# a degenerate kNN row (class similarity sums total <= 0) is treated as maximally unknown
DEGENERATE_FILL = 0.0


class EvaluationError(ValueError):
    pass


def _mean(values) -> float:
    return math.fsum(values) / len(values)


# -- detection ----------------------------------------------------------------

def _scores(encoder: Encoder, train: ImageDataset, test: ImageDataset, scorer: str, k: int):
    """(scores, predicted labels, degenerate count) for ``test``; larger means known."""
    if scorer in ("msp", "entropy"):
        if not encoder.config.has_classifier:
            raise EvaluationError(f"scorer {scorer!r} needs a classifier head; checkpoint has "
                                  f"head_mode {encoder.config.head_mode!r}")
        logits = encoder.logits(test.images)
        msp, neg_entropy = msp_and_entropy_scores(logits)
        return (msp if scorer == "msp" else neg_entropy), np.argmax(logits, axis=1), 0
    if scorer == "knn":
        bank = build_bank(encoder.embed(train.images), train.labels, k=k)
        res = knn_osr_score(bank, encoder.embed(test.images))
        return np.where(res.degenerate, DEGENERATE_FILL, res.score), res.label, int(res.degenerate.sum())
    if scorer == "mahalanobis":
        model = fit_class_gaussians(encoder.backbone_features(train.images), train.labels)
        feats = encoder.backbone_features(test.images).astype(np.float64)
        d = feats[:, None, :] - model.means[None]
        label = np.argmin(np.einsum("ncd,de,nce->nc", d, model.precision, d), axis=1)
        return mahalanobis_score(model.means, model.precision, feats), label, 0
    raise EvaluationError(f"unknown scorer {scorer!r}; expected one of {SCORERS}")


def detection_trial(encoder: Encoder, split: Split, scorer: str = "knn", k: int = 3) -> dict:
    """Metrics for one split: test-known is the positive (in) set."""
    s_in, pred, deg_in = _scores(encoder, split.train_known, split.test_known, scorer, k)
    s_out, _, deg_out = _scores(encoder, split.train_known, split.test_unknown, scorer, k)
    row = {"trial": split.manifest.get("trial", 0), **detection_metrics(s_in, s_out)}
    row["closed_set_accuracy"] = accuracy(pred, split.test_known.labels)
    row.update(n_in=len(s_in), n_out=len(s_out), degenerate=deg_in + deg_out, split=split.manifest)
    return row


def detection_report(trials: list[dict], scorer: str, k: int | None, config: dict, task: str = "osr",
                     wall_clock: float | None = None) -> dict:
    keys = DETECTION_METRICS + ("closed_set_accuracy",)
    report = {
        "kind": "detection",
        "task": task,
        "scorer": scorer,
        "metrics": list(keys),
        "trials": trials,
        "mean": {m: _mean([t[m] for t in trials]) for m in keys},
        "config": config,
    }
    if scorer == "knn":
        report["k"] = k
    if wall_clock is not None:
        report["wall_clock_seconds"] = wall_clock
    return report


def eval_detection(runs, scorer: str = "knn", k: int | None = None, task: str = "osr") -> dict:
    """Detection report over ``runs``, a list of (config, encoder, split) per trial.

    ``k`` defaults to each run's configured scorer k.
    """
    start = time.perf_counter()
    trials = []
    for config, encoder, split in runs:
        with threadpool_limits(limits=config.threads):
            trials.append(detection_trial(encoder, split, scorer, k or config.k))
    k_used = k or runs[0][0].k
    return detection_report(trials, scorer, k_used, runs[0][0].to_dict(), task, time.perf_counter() - start)


# -- corruption robustness ----------------------------------------------------

def _classifier(config: RunConfig, encoder: Encoder, train: ImageDataset, rule: str):
    if rule == "auto":
        rule = "head" if config.objective.startswith("ce") else "knn"
    if rule == "head":
        if not encoder.config.has_classifier:
            raise EvaluationError("classifier-head rule needs head_mode 'projection+classifier'")
        return rule, lambda images: np.argmax(encoder.logits(images), axis=1)
    if rule == "knn":
        bank = build_bank(encoder.embed(train.images), train.labels, k=config.k)
        return rule, lambda images: knn_osr_score(bank, encoder.embed(images)).label
    raise EvaluationError(f"unknown classifier rule {rule!r}")


def eval_corruption(config: RunConfig, encoder: Encoder, train: ImageDataset, test: ImageDataset,
                    types=CORRUPTION_TYPES, rule: str = "auto", seed: int = 0,
                    overrides: dict | None = None) -> dict:
    """Accuracy on every (type, severity) cell and the accuracy-drop aggregates.

    ``overrides`` maps ``(type, severity)`` to an explicit corruption parameter.
    """
    start = time.perf_counter()
    overrides = overrides or {}
    with threadpool_limits(limits=config.threads):
        rule, predict = _classifier(config, encoder, train, rule)
        clean = accuracy(predict(test.images), test.labels)
        cells: dict[str, dict[int, float]] = {}
        for ti, ctype in enumerate(types):
            cells[ctype] = {}
            for s in SEVERITIES:
                spec = CorruptionSpec(ctype, s, overrides.get((ctype, s)))
                images = corrupt(test.images, spec, seed=seed + 10 * ti + s)
                cells[ctype][s] = accuracy(predict(images), test.labels)
    agg = corruption_aggregates(CorruptionGrid(clean, cells))
    return {
        "kind": "corruption",
        "classifier": rule,
        "clean_accuracy": clean,
        "accuracy": {c: {str(s): v for s, v in row.items()} for c, row in cells.items()},
        "parameters": {c: {str(s): CorruptionSpec(c, s, overrides.get((c, s))).parameter() for s in SEVERITIES}
                       for c in types},
        **agg.to_dict(),
        "config": config.to_dict(),
        "wall_clock_seconds": time.perf_counter() - start,
    }


# -- linear probe -------------------------------------------------------------

def fit_linear_probe(features, labels, epochs: int = 100, lr: float = 1e-2, batch_size: int = 128,
                     seed: int = 0, n_classes: int | None = None) -> tuple[Parameter, Parameter]:
    """Softmax-regression weights (w, b) trained with Adam on fixed features."""
    x = np.asarray(features, dtype=np.float32)
    y = np.asarray(labels)
    c = int(n_classes or y.max() + 1)
    rng = np.random.default_rng(seed)
    w = Parameter(np.zeros((x.shape[1], c), dtype=np.float32), "probe.weight")
    b = Parameter(np.zeros(c, dtype=np.float32), "probe.bias")
    mu, sd = x.mean(axis=0), x.std(axis=0) + 1e-6
    x = (x - mu) / sd
    t = 0
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for i in range(0, len(x), batch_size):
            idx = order[i:i + batch_size]
            g = Graph(np.float32)
            loss = cross_entropy(ops.dense(g.constant(x[idx]), g.parameter(w), g.parameter(b)), y[idx])
            w.zero_grad()
            b.zero_grad()
            backward(g, loss)
            t += 1
            adam_step([w, b], lr, t)
    # fold the standardization into the weights
    w_eff = w.value / sd[:, None]
    b_eff = b.value - (mu / sd) @ w.value
    return Parameter(w_eff.astype(np.float32), w.name), Parameter(b_eff.astype(np.float32), b.name)


def probe_scores(w: Parameter, b: Parameter, features) -> np.ndarray:
    return np.asarray(features, dtype=np.float32) @ w.value + b.value


def linear_probe(config: RunConfig, encoder: Encoder, train: ImageDataset, test: ImageDataset,
                 epochs: int = 100, lr: float = 1e-2, seed: int = 0) -> dict:
    """Train a dense layer on frozen eval-mode backbone features; report top-1 and top-5."""
    start = time.perf_counter()
    with threadpool_limits(limits=config.threads):
        f_train = encoder.backbone_features(train.images)
        f_test = encoder.backbone_features(test.images)
        n_classes = int(max(train.labels.max(), test.labels.max()) + 1)
        w, b = fit_linear_probe(f_train, train.labels, epochs, lr, seed=seed, n_classes=n_classes)
        logits = probe_scores(w, b, f_test)
    report = {
        "kind": "probe",
        "classes": n_classes,
        "epochs": epochs,
        "lr": lr,
        "top1": topk_accuracy(logits, test.labels, 1),
        "config": config.to_dict(),
    }
    if n_classes >= 5:
        report["top5"] = topk_accuracy(logits, test.labels, 5)
    else:
        report["notes"] = [f"top-5 omitted: only {n_classes} classes"]
    report["wall_clock_seconds"] = time.perf_counter() - start
    return report
