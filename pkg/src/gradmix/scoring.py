"""Open-set scores over embeddings, plus the TwoNN intrinsic-dimension estimate.

Every score follows the convention *higher = more likely in-set*.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norm, 1e-12)


# -- kNN open-set scorer ----------------------------------------------------

@dataclass(frozen=True)
class FeatureBank:
    """Per-class unit-norm training embeddings.

    ``vectors`` holds all embeddings grouped by class; ``offsets[c]:offsets[c+1]``
    is the slice for class ``c``.
    """

    vectors: np.ndarray
    offsets: np.ndarray
    k: int

    @property
    def class_count(self) -> int:
        return len(self.offsets) - 1

    def class_vectors(self, c: int) -> np.ndarray:
        return self.vectors[self.offsets[c]:self.offsets[c + 1]]


def build_bank(embeddings, labels, k: int = 3) -> FeatureBank:
    embeddings = _normalize_rows(embeddings)
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("a feature bank needs at least 2 classes")
    if not np.array_equal(classes, np.arange(len(classes))):
        raise ValueError(f"class ids must be dense 0..C-1, got {classes.tolist()}")
    parts, offsets = [], [0]
    for c in classes:
        members = embeddings[labels == c]
        if len(members) < k:
            raise ValueError(f"class {int(c)} has {len(members)} samples, fewer than k={k}")
        parts.append(members)
        offsets.append(offsets[-1] + len(members))
    vectors = np.concatenate(parts)
    vectors.setflags(write=False)
    offs = np.asarray(offsets)
    offs.setflags(write=False)
    return FeatureBank(vectors, offs, k)


@dataclass
class DetectionResult:
    """Batched scorer output. ``degenerate`` marks rows whose class sums total <= 0
    (their ``score`` is NaN rather than a silently clipped number)."""

    score: np.ndarray
    label: np.ndarray
    class_sums: np.ndarray
    degenerate: np.ndarray


def knn_osr_score(bank: FeatureBank, test_embeddings) -> DetectionResult:
    """Sum of the top-k cosine similarities per class; score = max share of the total."""
    z = _normalize_rows(np.atleast_2d(test_embeddings))
    sims = z @ bank.vectors.T
    k = bank.k
    sums = np.empty((len(z), bank.class_count))
    for c in range(bank.class_count):
        block = sims[:, bank.offsets[c]:bank.offsets[c + 1]]
        top = np.partition(block, block.shape[1] - k, axis=1)[:, -k:]
        sums[:, c] = np.sort(top, axis=1).sum(axis=1)
    total = sums.sum(axis=1)
    degenerate = total <= 0
    best = sums.max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(degenerate, np.nan, best / np.where(degenerate, 1, total))
    return DetectionResult(score, np.argmax(sums, axis=1), sums, degenerate)


# -- softmax baselines ------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def msp_and_entropy_scores(logits) -> tuple[np.ndarray, np.ndarray]:
    """(max softmax probability, negated Shannon entropy) per row."""
    p = softmax(logits)
    msp = p.max(axis=-1)
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1)), 0.0)
    return msp, plogp.sum(axis=-1)


# -- Mahalanobis to the nearest class mean ----------------------------------

@dataclass
class GaussianClassModel:
    means: np.ndarray  # C x D
    precision: np.ndarray  # D x D


def fit_class_gaussians(embeddings, labels, ridge: float = 1e-3) -> GaussianClassModel:
    """Class means and the inverse of the pooled within-class covariance + ridge * I."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    means = np.stack([x[labels == c].mean(axis=0) for c in classes])
    centered = x - means[np.searchsorted(classes, labels)]
    cov = centered.T @ centered / len(x)
    return GaussianClassModel(means, class_precision(cov, ridge))


def class_precision(covariance, ridge: float = 1e-3) -> np.ndarray:
    cov = np.asarray(covariance, dtype=np.float64)
    reg = cov + ridge * np.eye(len(cov))
    if not np.allclose(reg, reg.T):
        raise ValueError("covariance must be symmetric")
    try:
        np.linalg.cholesky(reg)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive definite even after ridge regularization") from None
    return np.linalg.inv(reg)


def mahalanobis_score(means, precision, test_embeddings) -> np.ndarray:
    """Negated Mahalanobis distance to the closest class mean."""
    z = np.atleast_2d(np.asarray(test_embeddings, dtype=np.float64))
    means = np.atleast_2d(means)
    diff = z[:, None, :] - means[None, :, :]
    d2 = np.einsum("ncd,de,nce->nc", diff, precision, diff)
    return -np.sqrt(np.maximum(d2.min(axis=1), 0))


# -- intrinsic dimension ----------------------------------------------------

@dataclass
class TwoNNResult:
    dimension: float
    used: int
    skipped_duplicates: int


def twonn_id(points, discard_fraction: float = 0.1) -> TwoNNResult:
    """TwoNN estimate from second/first neighbour distance ratios mu.

    With the ratios sorted and the empirical CDF F(mu_i) = i / n, the
    dimension is the least-squares slope through the origin of
    -log(1 - F) against log(mu), fitted on all but the largest
    ``discard_fraction`` of ratios. Points whose nearest neighbour sits at
    distance 0 are skipped and counted.
    """
    x = np.asarray(points, dtype=np.float64)
    if len(x) < 50:
        raise ValueError(f"TwoNN needs at least 50 points, got {len(x)}")
    if not 0 <= discard_fraction < 1:
        raise ValueError(f"discard_fraction must lie in [0, 1), got {discard_fraction}")
    dist, _ = cKDTree(x).query(x, k=3)
    r1, r2 = dist[:, 1], dist[:, 2]
    ok = r1 > 0
    mu = np.sort(r2[ok] / r1[ok])
    n = len(mu)
    # the last point has F = 1; it is always excluded so log(1 - F) stays finite
    keep = min(int(np.floor(n * (1 - discard_fraction))), n - 1)
    log_mu = np.log(mu[:keep])
    target = -np.log1p(-np.arange(1, keep + 1) / n)
    return TwoNNResult(float(log_mu @ target / (log_mu @ log_mu)), keep, int((~ok).sum()))
