"""Contrastive and cross-entropy objectives as graph expressions.

Embedding batches are 2N x D with row ``i`` paired with row ``(i + N) % 2N``.
Every loss returns a scalar :class:`~gradmix.autodiff.Node`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, ops

GAMMA_MIN, GAMMA_MAX = 0.1, 0.5
SUPCON_MODES = ("different-label", "standard")


class LossError(ValueError):
    pass


@dataclass
class LossWeights:
    theta: float = 1.0  # supervised contrastive weight
    lam: float = 1.0  # self-supervised weight
    gamma: float | None = None  # mask side ratio; squared weight on the mixed-view term

    def __post_init__(self):
        if self.theta < 0 or self.lam < 0:
            raise LossError(f"loss weights must be >= 0, got theta={self.theta}, lambda={self.lam}")
        if self.gamma is not None:
            check_gamma(self.gamma)


def check_gamma(gamma: float) -> None:
    if not GAMMA_MIN <= gamma <= GAMMA_MAX:
        raise LossError(f"gamma must lie in [{GAMMA_MIN}, {GAMMA_MAX}], got {gamma}")


def _check_batch(z: Node, tau: float, paired: bool) -> int:
    if tau <= 0:
        raise LossError(f"temperature must be positive, got {tau}")
    n2 = z.shape[0]
    if n2 < 2:
        raise LossError(f"need at least 2 embeddings, got {n2}")
    if paired and n2 % 2:
        raise LossError(f"paired batch must have even size, got {n2}")
    return n2


def positive_pair_index(n2: int) -> np.ndarray:
    return (np.arange(n2) + n2 // 2) % n2


def _scaled_similarity(z, tau):
    return ops.scale(ops.cosine_similarity(z, z), 1.0 / tau)


def _anchor_mean(logits, rows, pos_weights, denom_mask):
    g = logits.graph
    sel = ops.take_rows(logits, rows)
    lse = ops.logsumexp(sel, mask=denom_mask[rows])
    pos = ops.sum(ops.mul(sel, g.constant(pos_weights[rows])), axis=1)
    return ops.mean(ops.add(lse, ops.scale(pos, -1.0)))


def simclr_loss(z: Node, tau: float = 0.1) -> Node:
    """NT-Xent over a paired 2N batch, averaged over all 2N anchors."""
    n2 = _check_batch(z, tau, paired=True)
    logits = _scaled_similarity(z, tau)
    pos = np.zeros((n2, n2))
    pos[np.arange(n2), positive_pair_index(n2)] = 1.0
    denom = ~np.eye(n2, dtype=bool)
    return _anchor_mean(logits, np.arange(n2), pos, denom)


def supcon_masks(labels, mode: str = "different-label"):
    """Positive weights (rows sum to 1 over P(i)), denominator mask, valid anchor rows."""
    if mode not in SUPCON_MODES:
        raise LossError(f"unknown supcon denominator mode {mode!r}; expected one of {SUPCON_MODES}")
    labels = np.asarray(labels)
    n2 = len(labels)
    same = labels[:, None] == labels[None, :]
    offdiag = ~np.eye(n2, dtype=bool)
    positives = same & offdiag
    denom = ~same if mode == "different-label" else offdiag
    counts = positives.sum(axis=1)
    valid = np.flatnonzero((counts > 0) & denom.any(axis=1))
    weights = positives / np.maximum(counts, 1)[:, None]
    return weights, denom, valid


def supcon_loss(z: Node, labels, tau: float = 0.1, mode: str = "different-label") -> Node:
    """Supervised contrastive loss.

    ``mode="different-label"`` restricts the denominator to different-label samples;
    ``mode="standard"`` uses every k != i. Anchors without positives (or without
    any denominator term) are dropped from the mean; a batch with no usable
    anchor yields a constant zero.
    """
    if labels is None:
        raise LossError("supcon_loss requires labels")
    n2 = _check_batch(z, tau, paired=False)
    if len(labels) != n2:
        raise LossError(f"{len(labels)} labels for {n2} embeddings")
    weights, denom, valid = supcon_masks(labels, mode)
    if valid.size == 0:
        return ops.scale(ops.sum(z), 0.0)
    return _anchor_mean(_scaled_similarity(z, tau), valid, weights, denom)


def _weighted(terms):
    total = None
    for weight, term in terms:
        t = ops.scale(term, weight)
        total = t if total is None else ops.add(total, t)
    return total


def _record(parts, name, node):
    if parts is not None:
        parts[name] = node
    return node


def contra_loss(z: Node, labels, weights: LossWeights, tau: float = 0.1, mode: str = "different-label",
                parts: dict | None = None) -> Node:
    """theta * supcon + lambda * simclr; zero-weight terms are not built.

    Unweighted component nodes are stored in ``parts`` when given.
    """
    terms = []
    if weights.theta:
        terms.append((weights.theta, _record(parts, "supcon", supcon_loss(z, labels, tau, mode))))
    if weights.lam or not terms:
        terms.append((weights.lam, _record(parts, "simclr", simclr_loss(z, tau))))
    return _weighted(terms)


def full_objective(z_clean: Node, z_mixed: Node, labels, weights: LossWeights, tau: float = 0.1,
                   mode: str = "different-label", parts: dict | None = None) -> Node:
    """theta * supcon(clean) + lambda * (simclr(clean) + gamma^2 * simclr(mixed))."""
    if weights.gamma is None:
        raise LossError("full objective needs the batch gamma")
    check_gamma(weights.gamma)
    clean = _record(parts, "simclr", simclr_loss(z_clean, tau))
    mixed = _record(parts, "simclr_mixed", simclr_loss(z_mixed, tau))
    terms = [(weights.lam, ops.add(clean, ops.scale(mixed, weights.gamma ** 2)))]
    if weights.theta:
        terms.insert(0, (weights.theta, _record(parts, "supcon", supcon_loss(z_clean, labels, tau, mode))))
    return _weighted(terms)


def cross_entropy(logits: Node, labels) -> Node:
    """Mean softmax cross-entropy."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise LossError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise LossError(f"label out of range [0, {c}): min {labels.min()}, max {labels.max()}")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ops.sum(ops.mul(logits, logits.graph.constant(onehot)), axis=1)
    return ops.mean(ops.add(ops.logsumexp(logits), ops.scale(picked, -1.0)))


def ce_and_ce_ssl_loss(logits: Node, labels, z_ssl: Node | None = None, ce_weight: float = 1.0,
                       lam: float = 1.0, tau: float = 0.1, parts: dict | None = None) -> Node:
    """ce_weight * CE, plus lam * simclr on ``z_ssl`` when given.

    ``ce_weight`` is the cross-entropy weight, unrelated to the mask ratio gamma.
    """
    terms = [(ce_weight, _record(parts, "ce", cross_entropy(logits, labels)))]
    if z_ssl is not None:
        terms.append((lam, _record(parts, "simclr", simclr_loss(z_ssl, tau))))
    return _weighted(terms)
