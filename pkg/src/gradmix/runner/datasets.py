"""Materialize the known/unknown split described by a run configuration."""

from __future__ import annotations

import os
from pathlib import Path

from ..data import PROTOCOLS, Split, load_cifar_binary, load_idx, make_split, synth_train_test
from ..data.formats import ImageDataset
from .config import ConfigError, DataConfig

DATA_DIR_ENV = "GRADMIX_DATA_DIR"


def data_dir(override=None) -> Path:
    if override:
        return Path(override)
    return Path(os.environ.get(DATA_DIR_ENV, "."))


def _resolve(paths, root: Path) -> list[Path]:
    return [p if p.is_absolute() else root / p for p in map(Path, paths)]


def _load_files(fmt: str, paths, root: Path, label_bytes: int = 1) -> ImageDataset:
    paths = _resolve(paths, root)
    if not paths:
        raise ConfigError(f"no files configured for source {fmt!r}")
    if fmt == "idx":
        return load_idx(paths[0], paths[1] if len(paths) > 1 else None)
    if fmt == "cifar-binary":
        return load_cifar_binary(paths, label_bytes=label_bytes)
    raise ConfigError(f"unknown file format {fmt!r}")


def prepare_split(data: DataConfig, root=None) -> Split:
    """Build the (train-known, test-known, test-unknown) split for ``data``."""
    if data.protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {data.protocol!r}; expected one of {sorted(PROTOCOLS)}")
    protocol = PROTOCOLS[data.protocol]
    root = data_dir(root)
    if data.source == "synth":
        known = synth_train_test(data.synth_classes, data.image_size, data.n_train_per_class,
                                 data.n_test_per_class, data.synth_seed)
        return make_split(known, protocol, data.trial, data.split_seed)
    known = (_load_files(data.source, data.train_files, root),
             _load_files(data.source, data.test_files, root))
    unknown = None
    if data.unknown_test_files:
        fmt = data.unknown_format or data.source
        test = _load_files(fmt, data.unknown_test_files, root, data.unknown_label_bytes)
        unknown = (test, test)
    return make_split(known, protocol, data.trial, data.split_seed, unknown)
