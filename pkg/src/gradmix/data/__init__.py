from .corruptions import CORRUPTION_TYPES, DEFAULT_TABLE, CorruptionSpec, corrupt
from .formats import (
    DatasetFormatError,
    ImageDataset,
    load_cifar_binary,
    load_dataset,
    load_idx,
    write_cifar_binary,
    write_idx,
)
from .splits import PROTOCOLS, Split, SplitProtocol, class_draw, make_split
from .synth import BlobClassSpec, default_class_specs, nearest_class_mean_accuracy, synth_blobs, synth_train_test

__all__ = [
    "BlobClassSpec", "CORRUPTION_TYPES", "CorruptionSpec", "DEFAULT_TABLE", "DatasetFormatError",
    "ImageDataset", "PROTOCOLS", "Split", "SplitProtocol", "class_draw", "corrupt",
    "default_class_specs", "load_cifar_binary", "load_dataset", "load_idx", "make_split",
    "nearest_class_mean_accuracy", "synth_blobs", "synth_train_test", "write_cifar_binary", "write_idx",
]
