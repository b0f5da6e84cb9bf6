import json
import math

import numpy as np
import pytest

from gradmix.attribution import activated_fraction
from gradmix.augment import standard_views
from gradmix.autodiff import Parameter
from gradmix.data import Split
from gradmix.data.formats import ImageDataset
from gradmix.runner import (
    Checkpoint,
    CheckpointError,
    ConfigError,
    RunConfig,
    TrainingError,
    adam_step,
    audit,
    cosine_lr,
    eval_corruption,
    eval_detection,
    export_attribution,
    fit_linear_probe,
    format_table,
    linear_probe,
    load_checkpoint,
    merge_reports,
    model_from_checkpoint,
    prepare_split,
    save_checkpoint,
    smoke_config,
    train,
    train_step,
)
from gradmix.runner.evaluate import detection_trial, probe_scores
from gradmix.runner.export import read_pgm
from gradmix.runner.report import strip_volatile, to_json
from gradmix.runner.train import attribution_maps, epoch_lr

SMALL = {"epochs": 2, "batch_size": 32, "data.n_train_per_class": 40, "data.n_test_per_class": 30,
         "encoder.embedding_dim": 32}


def small_config(**kw):
    return smoke_config(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def trained():
    cfg = small_config()
    split = prepare_split(cfg.data)
    return cfg, train(cfg, split.train_known), split


# -- scheduler and optimizer --------------------------------------------------

def test_cosine_endpoints_and_midpoint():
    assert cosine_lr(0, 100) == 1e-3
    assert cosine_lr(100, 100) == 5.12e-5
    assert cosine_lr(50, 100) == pytest.approx((1e-3 + 5.12e-5) / 2, rel=1e-15)
    with pytest.raises(ValueError):
        cosine_lr(101, 100)


def test_epoch_schedule_endpoints():
    cfg = smoke_config(epochs=10)
    assert epoch_lr(cfg, 0) == 1e-3 and epoch_lr(cfg, 9) == 5.12e-5
    lrs = [epoch_lr(cfg, e) for e in range(10)]
    assert all(b < a for a, b in zip(lrs, lrs[1:]))


def test_adam_zero_gradient_is_null_update():
    p = Parameter(np.array([1.0, -2.0, 3.0]), "p")
    before = p.value.copy()
    for t in range(1, 4):
        p.grad = np.zeros(3)
        adam_step([p], 1e-3, t)
    np.testing.assert_array_equal(p.value, before)


def test_adam_first_step_magnitude():
    p = Parameter(np.zeros(4), "p")
    p.grad = np.array([3.0, -0.5, 1e-2, -40.0])
    adam_step([p], 1e-3, 1)
    np.testing.assert_allclose(p.value, -1e-3 * np.sign(p.grad), rtol=1e-5)


def test_adam_quadratic_bowl_converges():
    target = np.array([0.3, -1.2, 2.0])
    p = Parameter(np.zeros(3), "p")
    for t in range(1, 2001):
        p.grad = 2 * (p.value - target)
        adam_step([p], cosine_lr(t - 1, 1999, 5e-2, 1e-5), t)
    assert np.max(np.abs(p.value - target)) <= 1e-4


def test_adam_errors():
    p = Parameter(np.zeros(3), "p")
    p.grad = np.zeros(2)
    with pytest.raises(ValueError):
        adam_step([p], 1e-3, 1)
    with pytest.raises(ValueError):
        adam_step([], 1e-3, 0)


# -- config -------------------------------------------------------------------

@pytest.mark.parametrize("override", [
    {"objective": "triplet"},
    {"augmentation": "mosaic"},
    {"gamma_min": 0.05},
    {"gamma_max": 0.6},
    {"tau": 0.0},
    {"k": 0},
    {"epochs": 0},
    {"lr_min": 2e-3},
    {"encoder.tap_names": []},
    {"objective": "supcon", "augmentation": "cutmix"},
    {"objective": "supcon+ssl+gradmix", "augmentation": "mixup"},
    {"objective": "ce", "augmentation": "none"},
    {"data.trial": 5},
])
def test_config_rejects(override):
    with pytest.raises(ConfigError):
        smoke_config(**override).validate()


def test_config_round_trip_and_unknown_fields():
    cfg = smoke_config(theta=0.5, **{"encoder.embedding_dim": 64})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.encoder.embedding_dim == 64
    with pytest.raises(ConfigError):
        smoke_config(bogus=1)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"data": {"nope": 1}})


def test_default_hyperparameters():
    cfg = RunConfig().validate()
    assert (cfg.lr_max, cfg.lr_min, cfg.gamma_min, cfg.gamma_max, cfg.k) == (1e-3, 5.12e-5, 0.1, 0.5, 3)


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_save_load_save_identical(tmp_path, trained):
    _, result, _ = trained
    a = save_checkpoint(result.checkpoint, tmp_path / "a.ckpt")
    b = save_checkpoint(load_checkpoint(a), tmp_path / "b.ckpt")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:8] == b"GMIXCKPT"


def test_checkpoint_restores_forward_bit_exactly(tmp_path, trained):
    _, result, split = trained
    path = save_checkpoint(result.checkpoint, tmp_path / "m.ckpt")
    _, encoder = model_from_checkpoint(load_checkpoint(path))
    x = split.test_known.images[:20]
    np.testing.assert_array_equal(encoder.embed(x), result.encoder.embed(x))
    np.testing.assert_array_equal(encoder.backbone_features(x), result.encoder.backbone_features(x))


def test_checkpoint_corruption_errors(tmp_path, trained):
    _, result, _ = trained
    raw = save_checkpoint(result.checkpoint, tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="block '.+' truncated"):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "version").write_bytes(raw[:8] + (2).to_bytes(4, "little") + raw[12:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "version")
    (tmp_path / "tail").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "tail")


def test_checkpoint_shape_table_validated(tmp_path):
    ck = Checkpoint({}, {"w": np.ones((2, 3), np.float32)})
    raw = save_checkpoint(ck, tmp_path / "c").read_bytes()
    bad = raw.replace(b'"shape":[2,3]', b'"shape":[2,4]')
    (tmp_path / "bad").write_bytes(bad)
    with pytest.raises(CheckpointError, match="'w'"):
        load_checkpoint(tmp_path / "bad")


# -- training -----------------------------------------------------------------

def test_ssl_only_loss_decreases():
    cfg = smoke_config(epochs=6, objective="ssl-only", augmentation="none")
    losses = train(cfg, prepare_split(cfg.data).train_known).epoch_losses
    assert sum(b < a for a, b in zip(losses, losses[1:])) >= 4, losses


def test_gradmix_logs_gamma_and_components(trained):
    _, result, _ = trained
    assert result.log
    for rec in result.log:
        assert 0.1 <= rec["gamma"] <= 0.5
        assert rec["mix_weight"] == rec["gamma"] ** 2
        assert {"loss", "lr", "epoch", "batch"} <= set(rec)


def test_training_deterministic(tmp_path):
    cfg = small_config(epochs=1)
    data = prepare_split(cfg.data).train_known
    train(cfg, data, checkpoint_path=tmp_path / "a")
    train(cfg, data, checkpoint_path=tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_resume_is_bit_exact(tmp_path):
    cfg = small_config(epochs=3)
    data = prepare_split(cfg.data).train_known
    train(cfg, data, checkpoint_path=tmp_path / "full")
    train(cfg, data, stop_after=1, checkpoint_path=tmp_path / "part")
    part = load_checkpoint(tmp_path / "part")
    assert part.epoch == 1
    train(cfg, data, resume=part, checkpoint_path=tmp_path / "resumed")
    assert (tmp_path / "full").read_bytes() == (tmp_path / "resumed").read_bytes()
    with pytest.raises(ConfigError):
        train(cfg.with_overrides({"tau": 0.2}), data, resume=part)


def test_attribution_pass_is_isolated():
    cfg = small_config()
    split = prepare_split(cfg.data)
    x = split.train_known.images[:16].astype(np.float32)
    y = split.train_known.labels[:16]

    _, reference = model_from_checkpoint(train(cfg, split.train_known, stop_after=0).checkpoint)
    train_step(cfg, reference, x, y, np.random.default_rng(5), 1e-3, 1)

    _, enc = model_from_checkpoint(train(cfg, split.train_known, stop_after=0).checkpoint)
    before = {k: v.copy() for k, v in enc.state_tensors().items()}
    for p in enc.params.values():
        p.grad = np.full_like(p.value, 7.0)
    view_b = standard_views(x, np.random.default_rng(5)).view_b
    maps = attribution_maps(cfg, enc, x, view_b, y)
    for name, v in enc.state_tensors().items():
        np.testing.assert_array_equal(v, before[name])
    assert all(np.all(p.grad == 7.0) for p in enc.params.values())
    train_step(cfg, enc, x, y, np.random.default_rng(5), 1e-3, 1, maps=maps.values)

    for name, v in enc.state_tensors().items():
        np.testing.assert_array_equal(v, reference.state_tensors()[name])


def test_nan_loss_aborts_with_dump():
    cfg = small_config(epochs=1)
    data = prepare_split(cfg.data).train_known
    images = data.images.copy()
    images[:] = np.nan
    with pytest.raises(TrainingError) as info:
        train(cfg, ImageDataset(images, data.labels))
    dump = info.value.dump
    assert dump["batch"] == 0 and dump["epoch"] == 0
    assert math.isnan(dump["loss"]) and "gamma" in dump


# -- evaluation ---------------------------------------------------------------

def test_detection_self_comparison_null(trained):
    cfg, result, split = trained
    same = Split(split.train_known, split.test_known, split.test_known, split.manifest)
    row = detection_trial(result.encoder, same, "knn", cfg.k)
    assert abs(row["auroc"] - 0.5) <= 0.02


def test_detection_report_echoes_k_and_audits(trained):
    cfg, result, split = trained
    report = eval_detection([(cfg, result.encoder, split)])
    assert report["k"] == cfg.k == 3
    assert eval_detection([(cfg, result.encoder, split)], k=5)["k"] == 5
    assert report["trials"][0]["split"]["known_classes"] == split.manifest["known_classes"]
    assert audit(report) == []
    assert audit(json.loads(to_json(report))) == []
    tampered = json.loads(to_json(report))
    tampered["mean"]["auroc"] += 0.1
    assert audit(tampered)
    for scorer in ("mahalanobis",):
        assert 0 <= eval_detection([(cfg, result.encoder, split)], scorer)["mean"]["auroc"] <= 1


def test_detection_needs_classifier_for_msp(trained):
    cfg, result, split = trained
    with pytest.raises(ValueError, match="classifier"):
        eval_detection([(cfg, result.encoder, split)], "msp")


def test_identity_corruption_has_zero_drop(trained):
    cfg, result, split = trained
    overrides = {("gaussian-noise", s): 0.0 for s in range(1, 6)}
    report = eval_corruption(cfg, result.encoder, split.train_known, split.test_known,
                             types=("gaussian-noise",), overrides=overrides)
    assert report["overall"] == 0.0
    assert all(v == 0.0 for v in report["drop"]["gaussian-noise"].values())


def test_corruption_grid_complete_and_audited(trained):
    cfg, result, split = trained
    types = ("gaussian-noise", "pixelate")
    report = eval_corruption(cfg, result.encoder, split.train_known, split.test_known, types=types)
    assert set(report["accuracy"]) == set(types)
    assert all(set(row) == {"1", "2", "3", "4", "5"} for row in report["accuracy"].values())
    assert audit(json.loads(to_json(report))) == []
    report["accuracy"]["pixelate"]["3"] = 0.0 if report["accuracy"]["pixelate"]["3"] else 1.0
    assert audit(report)
    assert "corruption accuracy" in format_table(json.loads(to_json(report)))


def _blobs(n, c, d, rng, spread=0.1):
    centers = rng.normal(size=(c, d)) * 3
    labels = rng.integers(0, c, size=n)
    return centers[labels] + rng.normal(size=(n, d)) * spread, labels


def test_probe_separable_features():
    rng = np.random.default_rng(0)
    x, y = _blobs(600, 6, 10, rng)
    w, b = fit_linear_probe(x[:400], y[:400], epochs=50, seed=0)
    assert np.mean(np.argmax(probe_scores(w, b, x[400:]), axis=1) == y[400:]) >= 0.99


def test_probe_shuffled_labels_at_chance():
    rng = np.random.default_rng(1)
    c = 4
    x = rng.normal(size=(2400, 8))
    y = rng.integers(0, c, size=2400)
    w, b = fit_linear_probe(x[:400], y[:400], epochs=30, seed=0, n_classes=c)
    acc = np.mean(np.argmax(probe_scores(w, b, x[400:]), axis=1) == y[400:])
    assert abs(acc - 1 / c) <= 0.05


def test_linear_probe_freezes_encoder(trained):
    cfg, result, split = trained
    before = {k: v.copy() for k, v in result.encoder.state_tensors().items()}
    report = linear_probe(cfg, result.encoder, split.train_known, split.test_known, epochs=10)
    for k, v in result.encoder.state_tensors().items():
        np.testing.assert_array_equal(v, before[k])
    assert "top5" not in report and report["notes"]
    assert 0 <= report["top1"] <= 1
    assert "note: top-5 omitted" in format_table(report)


# -- export -------------------------------------------------------------------

def test_activated_fraction_extremes():
    thresholds = np.geomspace(1e-5, 1e-3, 5)
    np.testing.assert_array_equal(activated_fraction(np.zeros((8, 8)), thresholds), 0.0)
    np.testing.assert_array_equal(activated_fraction(np.full((8, 8), 2e-3), thresholds), 1.0)


def test_export_maps(tmp_path, trained):
    cfg, result, split = trained
    images, labels = split.test_known.images[:3], split.test_known.labels[:3]
    report = export_attribution(cfg, result.encoder, images, labels, tmp_path)
    names = {m["map"] for m in report["maps"]}
    assert names == {"conv3_1", "conv4_1", "conv5_1", "aggregate"}
    assert len(report["maps"]) == 3 * 4
    for m in report["maps"]:
        grid = np.loadtxt(tmp_path / m["files"][0])
        assert grid.shape == tuple(m["shape"])
        assert read_pgm(tmp_path / m["files"][1]).shape == grid.shape
        curve = m["activated_fraction"]
        assert all(b <= a for a, b in zip(curve, curve[1:]))
    agg = next(m for m in report["maps"] if m["map"] == "aggregate")
    assert agg["shape"] == [16, 16]
    assert audit(report) == []
    assert "activated-area fraction" in format_table(report)


# -- reports ------------------------------------------------------------------

def test_merge_and_table(trained):
    cfg, result, split = trained
    det = eval_detection([(cfg, result.encoder, split)])
    merged = merge_reports([det, merge_reports([det])])
    assert len(merged["reports"]) == 2 and audit(merged) == []
    text = format_table(merged)
    assert text.count("osr detection, scorer knn (k=3)") == 2
    assert strip_volatile(det) == strip_volatile(eval_detection([(cfg, result.encoder, split)]))
