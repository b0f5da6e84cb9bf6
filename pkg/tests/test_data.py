import struct

import numpy as np
import pytest

from gradmix.data import (
    CORRUPTION_TYPES,
    DEFAULT_TABLE,
    PROTOCOLS,
    CorruptionSpec,
    DatasetFormatError,
    ImageDataset,
    class_draw,
    corrupt,
    default_class_specs,
    load_cifar_binary,
    load_dataset,
    load_idx,
    make_split,
    nearest_class_mean_accuracy,
    synth_blobs,
    synth_train_test,
    write_cifar_binary,
    write_idx,
)
from gradmix.metrics import openness


def _quantized(shape, seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=shape).astype(np.float32) / np.float32(255)


# -- formats ------------------------------------------------------------------

def test_idx_round_trip(tmp_path):
    ds = ImageDataset(_quantized((7, 1, 5, 6)), np.arange(7) % 3)
    write_idx(ds, tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte")
    back = load_idx(tmp_path / "train-images-idx3-ubyte")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert (tmp_path / "train-images-idx3-ubyte").read_bytes()[:4] == b"\x00\x00\x08\x03"


def test_idx_magic_checked(tmp_path):
    bad = tmp_path / "images"
    bad.write_bytes(b"\x00\x00\x08\x04" + struct.pack(">III", 1, 2, 2) + bytes(4))
    with pytest.raises(DatasetFormatError, match="magic"):
        load_idx(bad, tmp_path / "labels")


def test_idx_truncation_and_label_range(tmp_path):
    ds = ImageDataset(_quantized((3, 1, 4, 4)), [0, 1, 2])
    write_idx(ds, tmp_path / "images", tmp_path / "labels")
    data = (tmp_path / "images").read_bytes()
    (tmp_path / "short").write_bytes(data[:-1])
    with pytest.raises(DatasetFormatError, match="bytes"):
        load_idx(tmp_path / "short", tmp_path / "labels")
    with pytest.raises(DatasetFormatError, match="out of range"):
        load_idx(tmp_path / "images", tmp_path / "labels", num_classes=2)
    with pytest.raises(DatasetFormatError):
        load_idx(tmp_path / "missing", tmp_path / "labels")


def test_cifar_binary_records(tmp_path):
    ds = ImageDataset(_quantized((10, 3, 32, 32), 1), np.arange(10))
    write_cifar_binary(ds, tmp_path / "data_batch_1.bin")
    assert (tmp_path / "data_batch_1.bin").stat().st_size == 10 * 3073
    back = load_cifar_binary(tmp_path / "data_batch_1.bin")
    assert back.images.shape == (10, 3, 32, 32)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    # record layout: label byte then the red plane
    raw = (tmp_path / "data_batch_1.bin").read_bytes()
    assert raw[0] == 0 and raw[1] == int(round(ds.images[0, 0, 0, 0] * 255))


def test_cifar100_two_label_bytes(tmp_path):
    ds = ImageDataset(_quantized((4, 3, 32, 32), 2), [5, 99, 0, 42])
    write_cifar_binary(ds, tmp_path / "train.bin", label_bytes=2)
    back = load_dataset(tmp_path / "train.bin", "cifar-binary", label_bytes=2)
    np.testing.assert_array_equal(back.labels, [5, 99, 0, 42])


def test_cifar_binary_errors(tmp_path):
    (tmp_path / "bad.bin").write_bytes(bytes(3073 + 5))
    with pytest.raises(DatasetFormatError, match="record"):
        load_cifar_binary(tmp_path / "bad.bin")
    rec = bytearray(3073)
    rec[0] = 12
    (tmp_path / "label.bin").write_bytes(bytes(rec))
    with pytest.raises(DatasetFormatError, match="out of range"):
        load_cifar_binary(tmp_path / "label.bin")
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "label.bin", "png")


# -- synthetic blobs ----------------------------------------------------------

def test_synth_counts_and_determinism():
    specs = default_class_specs(3)
    a = synth_blobs(specs, 32, 100, seed=4)
    b = synth_blobs(specs, 32, 100, seed=4)
    assert len(a) == 300 and a.images.shape == (300, 3, 32, 32)
    np.testing.assert_array_equal(a.images, b.images)
    assert a.images.min() >= 0 and a.images.max() <= 1
    np.testing.assert_array_equal(np.bincount(a.labels), [100, 100, 100])


def test_synth_separable_by_class_mean():
    train, test = synth_train_test(3, 16, 100, 100, seed=0)
    assert nearest_class_mean_accuracy(train, test) >= 0.95


def test_synth_train_test_disjoint_draws():
    train, test = synth_train_test(2, 16, 20, 20, seed=0)
    flat_tr = {x.tobytes() for x in train.images}
    assert not any(x.tobytes() in flat_tr for x in test.images)


# -- splits -------------------------------------------------------------------

@pytest.mark.parametrize("name,table", [("mnist", 22.54), ("svhn", 22.54), ("cifar10", 22.54),
                                        ("cifar+10", 46.55), ("cifar+50", 72.78), ("tinyimagenet", 68.37)])
def test_protocol_table_openness(name, table):
    assert abs(PROTOCOLS[name].openness - table) <= 0.01


def test_protocol_counts():
    assert (PROTOCOLS["cifar10"].known_count, PROTOCOLS["cifar10"].unknown_count) == (6, 4)
    p = PROTOCOLS["cifar+50"]
    assert (p.known_count, p.known_source, p.unknown_count, p.unknown_source) == (4, "cifar10", 50, "cifar100")


def _labelled(n_classes, per, seed):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), per)
    return ImageDataset(rng.random((len(labels), 1, 2, 2)).astype(np.float32), labels)


def test_make_split_same_source():
    train, test = _labelled(10, 5, 0), _labelled(10, 3, 1)
    split = make_split((train, test), PROTOCOLS["cifar10"], trial=2, seed=3)
    known, unknown = split.manifest["known_classes"], split.manifest["unknown_classes"]
    assert len(known) == 6 and len(unknown) == 4 and not set(known) & set(unknown)
    assert len(split.train_known) == 30 and len(split.test_known) == 18 and len(split.test_unknown) == 12
    assert set(split.train_known.labels.tolist()) == set(range(6))
    assert set(split.test_unknown.labels.tolist()) == set(unknown)
    assert split.manifest["openness"] == openness(6, 4)
    again = make_split((train, test), PROTOCOLS["cifar10"], trial=2, seed=3)
    np.testing.assert_array_equal(again.train_known.images, split.train_known.images)
    # train and test come from the native partitions
    tr = {x.tobytes() for x in split.train_known.images}
    assert not any(x.tobytes() in tr for x in split.test_known.images)


def test_make_split_cross_source():
    c10 = (_labelled(10, 2, 0), _labelled(10, 2, 1))
    c100 = (_labelled(100, 1, 2), _labelled(100, 1, 3))
    split = make_split(c10, PROTOCOLS["cifar+50"], trial=0, unknown_source=c100)
    assert len(split.manifest["known_classes"]) == 4 and len(split.manifest["unknown_classes"]) == 50
    assert len(split.test_unknown) == 50
    with pytest.raises(ValueError):
        make_split(c10, PROTOCOLS["cifar+50"])


def test_class_draw_trials_and_feasibility():
    draws = {tuple(map(tuple, class_draw(PROTOCOLS["cifar10"], 10, 10, t))) for t in range(5)}
    assert len(draws) > 1
    with pytest.raises(ValueError):
        class_draw(PROTOCOLS["cifar10"], 8, 8, 0)
    with pytest.raises(ValueError):
        class_draw(PROTOCOLS["cifar10"], 10, 10, 5)


# -- corruptions --------------------------------------------------------------

def test_corruption_tables_monotone():
    assert len(CORRUPTION_TYPES) == 7
    for kind, values in DEFAULT_TABLE.items():
        diffs = np.diff(values)
        assert np.all(diffs > 0) or np.all(diffs < 0), kind


def test_corruption_identities():
    x = _quantized((3, 3, 8, 8))
    np.testing.assert_array_equal(corrupt(x, CorruptionSpec("gaussian-noise", 1, value=0.0)), x)
    np.testing.assert_array_equal(corrupt(x, CorruptionSpec("pixelate", 1, value=1.0)), x)
    np.testing.assert_array_equal(corrupt(x, CorruptionSpec("brightness", 1, value=0.0)), x)


@pytest.mark.parametrize("kind", CORRUPTION_TYPES)
@pytest.mark.parametrize("severity", [1, 3, 5])
def test_corruption_range_and_determinism(kind, severity):
    x = _quantized((4, 3, 16, 16), 5)
    spec = CorruptionSpec(kind, severity)
    a, b = corrupt(x, spec, seed=7), corrupt(x, spec, seed=7)
    np.testing.assert_array_equal(a, b)
    assert a.shape == x.shape and a.dtype == x.dtype
    assert a.min() >= 0 and a.max() <= 1


def test_corruption_errors():
    with pytest.raises(ValueError):
        corrupt(np.zeros((1, 1, 4, 4)), CorruptionSpec("fog", 1))
    with pytest.raises(ValueError):
        corrupt(np.zeros((1, 1, 4, 4)), CorruptionSpec("brightness", 6))


@pytest.mark.parametrize("kind", ["gaussian-noise", "shot-noise", "impulse-noise"])
def test_noise_deviation_increases_with_severity(kind):
    x = np.random.default_rng(0).uniform(0.2, 0.8, size=(1000, 1, 8, 8))
    dev = [np.sqrt(((corrupt(x, CorruptionSpec(kind, s), seed=s) - x) ** 2).sum(axis=(1, 2, 3))).mean()
           for s in range(1, 6)]
    assert all(b > a for a, b in zip(dev, dev[1:])), dev
