"""Known/unknown class split protocols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..metrics import openness
from .formats import ImageDataset

TRIALS = 5


@dataclass(frozen=True)
class SplitProtocol:
    name: str
    known_count: int
    known_source: str
    unknown_count: int
    unknown_source: str

    @property
    def same_source(self) -> bool:
        return self.known_source == self.unknown_source

    @property
    def openness(self) -> float:
        return openness(self.known_count, self.unknown_count)


PROTOCOLS = {
    p.name: p
    for p in [
        SplitProtocol("mnist", 6, "mnist", 4, "mnist"),
        SplitProtocol("svhn", 6, "svhn", 4, "svhn"),
        SplitProtocol("cifar10", 6, "cifar10", 4, "cifar10"),
        SplitProtocol("cifar+10", 4, "cifar10", 10, "cifar100"),
        SplitProtocol("cifar+50", 4, "cifar10", 50, "cifar100"),
        SplitProtocol("tinyimagenet", 20, "tinyimagenet", 180, "tinyimagenet"),
        SplitProtocol("synth", 2, "synth", 1, "synth"),
    ]
}


@dataclass
class Split:
    train_known: ImageDataset
    test_known: ImageDataset
    test_unknown: ImageDataset
    manifest: dict


def class_draw(protocol: SplitProtocol, n_known_source: int, n_unknown_source: int, trial: int, seed: int = 0):
    """(known ids, unknown ids) for one of the five seeded trials."""
    if not 0 <= trial < TRIALS:
        raise ValueError(f"trial must lie in [0, {TRIALS}), got {trial}")
    if protocol.same_source:
        if protocol.known_count + protocol.unknown_count > n_known_source:
            raise ValueError(f"{protocol.name}: {protocol.known_count}+{protocol.unknown_count} classes "
                             f"requested from a {n_known_source}-class source")
    elif protocol.known_count > n_known_source or protocol.unknown_count > n_unknown_source:
        raise ValueError(f"{protocol.name}: sources have {n_known_source}/{n_unknown_source} classes, "
                         f"need {protocol.known_count}/{protocol.unknown_count}")
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(TRIALS):
        perm = rng.permutation(n_known_source)
        known = perm[: protocol.known_count]
        if protocol.same_source:
            unknown = perm[protocol.known_count: protocol.known_count + protocol.unknown_count]
        else:
            unknown = rng.permutation(n_unknown_source)[: protocol.unknown_count]
        draws.append((sorted(int(c) for c in known), sorted(int(c) for c in unknown)))
    return draws[trial]


def make_split(known_source: tuple[ImageDataset, ImageDataset], protocol: SplitProtocol, trial: int = 0,
               seed: int = 0, unknown_source: tuple[ImageDataset, ImageDataset] | None = None) -> Split:
    """Partition native train/test sets into train-known, test-known and test-unknown.

    Known labels are remapped to 0..k-1 in sorted id order; unknown samples keep
    their source ids. Sources are (train, test) pairs.
    """
    train, test = known_source
    if unknown_source is None:
        if not protocol.same_source:
            raise ValueError(f"{protocol.name} needs a separate {protocol.unknown_source} source")
        unknown_source = known_source
    _, unk_test = unknown_source
    known, unknown = class_draw(protocol, train.class_count, unk_test.class_count, trial, seed)
    remap = {c: i for i, c in enumerate(known)}

    def known_part(ds):
        idx = np.flatnonzero(np.isin(ds.labels, known))
        labels = np.array([remap[int(c)] for c in ds.labels[idx]], dtype=np.int64)
        return ImageDataset(ds.images[idx], labels)

    unk_idx = np.flatnonzero(np.isin(unk_test.labels, unknown))
    manifest = {
        "protocol": protocol.name,
        "trial": trial,
        "seed": seed,
        "known_classes": known,
        "unknown_classes": unknown,
        "known_source": protocol.known_source,
        "unknown_source": protocol.unknown_source,
        "openness": protocol.openness,
    }
    return Split(known_part(train), known_part(test), unk_test.subset(unk_idx), manifest)
