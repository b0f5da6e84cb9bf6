import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradmix.attribution import (
    AttributionMap,
    activated_fraction,
    aggregate,
    gradcam,
    layer_maps,
    layercam,
    minmax_normalize,
    peak_location,
)
from gradmix.autodiff import FeatureTaps


def taps_of(act, grad, name="conv4_2"):
    act = np.asarray(act, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    while act.ndim < 4:
        act, grad = act[None], grad[None]
    return FeatureTaps({name: act}, {name: grad})


def test_gradcam_hand_example():
    m = gradcam(taps_of([[1, 2], [3, 4]], np.full((2, 2), 0.5)), "conv4_2")
    np.testing.assert_array_equal(m.values[0], [[0.5, 1.0], [1.5, 2.0]])
    assert m.source_layers == ["conv4_2"]


def test_gradcam_negative_gradient_gives_zeros():
    m = gradcam(taps_of([[1, 2], [3, 4]], np.full((2, 2), -0.3)), "conv4_2")
    assert np.all(m.values == 0)


def test_gradcam_opposite_channels_cancel():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    act = np.stack([a, a])[None]
    grad = np.stack([np.full((2, 2), 0.7), np.full((2, 2), -0.7)])[None]
    assert np.all(gradcam(taps_of(act, grad), "conv4_2").values == 0)


def test_layercam_hand_example():
    m = layercam(taps_of([[1, -2], [3, 4]], [[1, -1], [2, 0]]), "conv4_2")
    np.testing.assert_array_equal(m.values[0], [[1, 0], [6, 0]])


def test_layercam_zero_activation():
    m = layercam(taps_of(np.zeros((3, 4, 4))[None], np.random.default_rng(0).normal(size=(1, 3, 4, 4))), "conv4_2")
    assert np.all(m.values == 0)


def test_layercam_unit_gradient_is_relu_channel_sum():
    act = np.random.default_rng(1).normal(size=(2, 3, 5, 5))
    m = layercam(taps_of(act, np.ones_like(act)), "conv4_2")
    np.testing.assert_array_equal(m.values, np.maximum(act.sum(axis=1), 0))


def test_missing_tap_errors():
    taps = taps_of([[1.0]], [[1.0]])
    with pytest.raises(KeyError):
        gradcam(taps, "conv3_2")
    with pytest.raises(KeyError):
        layercam(taps, "conv3_2")


def test_aggregate_single_map_is_minmax():
    v = np.random.default_rng(2).random((3, 8, 8))
    out = aggregate([AttributionMap(v, ["a"])], 8)
    lo, hi = v.min(axis=(1, 2), keepdims=True), v.max(axis=(1, 2), keepdims=True)
    np.testing.assert_allclose(out.values, (v - lo) / (hi - lo), rtol=0, atol=1e-15)


def test_aggregate_two_identical_maps_doubles():
    v = AttributionMap(np.random.default_rng(3).random((2, 8, 8)), ["a"])
    one = aggregate([v], 8).values
    np.testing.assert_array_equal(aggregate([v, v], 8).values, 2 * one)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_aggregate_k_copies_is_k_times(k):
    v = AttributionMap(np.random.default_rng(k).random((2, 4, 4)), ["a"])
    np.testing.assert_array_equal(aggregate([v] * k, 16).values, k * aggregate([v], 16).values)


def test_aggregate_mixed_resolutions():
    rng = np.random.default_rng(4)
    maps = [AttributionMap(rng.random((2, 8, 8)), ["conv4_2"]), AttributionMap(rng.random((2, 4, 4)), ["conv5_2"])]
    out = aggregate(maps, 32)
    assert out.values.shape == (2, 32, 32)
    assert out.resolution == (32, 32)
    assert out.source_layers == ["conv4_2", "conv5_2"]
    assert out.values.min() >= 0 and out.values.max() <= 2


def test_aggregate_constant_map_normalizes_to_zero():
    assert np.all(minmax_normalize(np.full((1, 3, 3), 4.2)) == 0)
    with pytest.raises(ValueError):
        aggregate([], 8)


def test_layer_maps_combines_layers():
    rng = np.random.default_rng(5)
    act = {"a": rng.random((2, 3, 4, 4)), "b": rng.random((2, 3, 2, 2))}
    grad = {"a": rng.normal(size=(2, 3, 4, 4)), "b": rng.normal(size=(2, 3, 2, 2))}
    taps = FeatureTaps(act, grad)
    out = layer_maps(taps, ["a", "b"], 8)
    want = aggregate([layercam(taps, "a"), layercam(taps, "b")], 8)
    np.testing.assert_array_equal(out.values, want.values)
    assert layer_maps(taps, ["a"], 8, method="gradcam").values.shape == (2, 8, 8)


def test_peak_location_examples():
    assert peak_location(np.array([[0, 1], [1, 0]])) == (0, 1)
    m = np.zeros((10, 10))
    m[5, 7] = 3
    assert peak_location(m) == (5, 7)
    assert peak_location(np.zeros((6, 6))) == (0, 0)
    with pytest.raises(ValueError):
        peak_location(np.zeros((2, 2, 2)))


def test_activated_fraction():
    assert list(activated_fraction(np.zeros((4, 4)), [1e-5, 1e-3])) == [0.0, 0.0]
    assert list(activated_fraction(np.full((4, 4), 0.01), [1e-5, 1e-3])) == [1.0, 1.0]
    v = np.random.default_rng(0).random((8, 8)) * 2e-3
    curve = activated_fraction(v, np.geomspace(1e-5, 1e-3, 7))
    assert np.all(np.diff(curve) <= 0)


@pytest.mark.parametrize("method", [gradcam, layercam])
def test_random_taps_nonnegative_and_scale_covariant(method):
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        n, c, h = int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
        act = rng.normal(size=(n, c, h, h))
        grad = rng.normal(size=(n, c, h, h))
        scale = float(2.0 ** rng.integers(-6, 7))  # powers of two keep the check exact
        base = method(taps_of(act, grad), "conv4_2").values
        scaled = method(taps_of(act, grad * scale), "conv4_2").values
        assert base.min() >= 0 and np.all(np.isfinite(base))
        np.testing.assert_array_equal(scaled, scale * base)


@pytest.mark.parametrize("method", [gradcam, layercam])
def test_scale_covariance_arbitrary_positive_factor(method):
    rng = np.random.default_rng(7)
    for _ in range(200):
        act, grad = rng.normal(size=(1, 3, 4, 4)), rng.normal(size=(1, 3, 4, 4))
        c = float(rng.uniform(0.01, 100))
        base = method(taps_of(act, grad), "conv4_2").values
        np.testing.assert_allclose(method(taps_of(act, grad * c), "conv4_2").values, c * base, rtol=1e-12,
                                   atol=1e-12 * c)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), h=st.integers(1, 9), w=st.integers(1, 9),
       transform=st.sampled_from(["exp", "cube", "affine", "sqrt"]))
def test_peak_invariant_under_increasing_transform(seed, h, w, transform):
    rng = np.random.default_rng(seed)
    v = rng.integers(0, 5, size=(h, w)).astype(np.float64)  # small alphabet makes ties common
    f = {"exp": np.exp, "cube": lambda x: x ** 3, "affine": lambda x: 3 * x + 1, "sqrt": np.sqrt}[transform]
    assert peak_location(f(v)) == peak_location(v)
