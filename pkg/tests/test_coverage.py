import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from borderconv import convops as C
from borderconv.convops import ConvSpec, Kernel
from borderconv.coverage import (boundary_reach_1d, coverage_1d_brute, coverage_1d_closed,
                                 coverage_2d, coverage_2d_brute, network_coverage,
                                 receptive_field)
from borderconv.errors import ConfigError
from borderconv.nn import Conv, GlobalMaxPool, Logits1x1, NetworkSpec, redgreen_net

MODES = [("valid", "zero"), ("same", "zero"), ("same", "circular"), ("full", "zero")]


def tap_count_by_convolution(n, k, boundary, pad):
    """Coverage as the input gradient of sum(output) for an all-ones kernel."""
    spec = ConvSpec(boundary, pad, 0, k, 1, 1)
    kern = Kernel(np.ones((1, 1, 1, 2 * k + 1)))
    x = np.zeros((1, 1, 1, n))
    g = np.ones(C.conv2d_forward(x, kern, spec).shape)
    gx, _, _ = C.conv2d_backward(x, kern, spec, g)
    return gx.ravel()


@pytest.mark.parametrize("mode", MODES)
def test_closed_equals_brute_small_grid(mode):
    for k in range(0, 4):
        for n in range(2 * k + 1, 20):
            assert np.array_equal(coverage_1d_closed(n, k, *mode).counts,
                                  coverage_1d_brute(n, k, *mode).counts), (n, k)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 4), st.integers(0, 30), st.sampled_from(MODES))
def test_counts_equal_ones_kernel_gradient(k, extra, mode):
    n = 2 * k + 1 + extra
    got = coverage_1d_closed(n, k, *mode).counts
    assert np.array_equal(got, tap_count_by_convolution(n, k, *mode))


def test_spot_values():
    assert coverage_1d_closed(10, 2, "valid").counts.tolist() == [1, 2, 3, 4, 5, 5, 4, 3, 2, 1]
    assert coverage_1d_closed(10, 2, "same", "zero").counts.tolist() == [3, 4, 5, 5, 5, 5, 5, 5, 4, 3]
    assert coverage_1d_closed(10, 2, "full").counts.tolist() == [5] * 10
    assert coverage_1d_closed(10, 2, "same", "circular").counts.tolist() == [5] * 10


@pytest.mark.parametrize("k", [0, 1, 2, 5])
def test_minimum_valid_size_reads_each_position_once(k):
    # one output position, so every input position is read exactly once
    n = 2 * k + 1
    assert coverage_1d_brute(n, k, "valid").counts.tolist() == [1] * n
    assert coverage_1d_closed(n, k, "valid").counts.tolist() == [1] * n


@pytest.mark.parametrize("mode", MODES)
def test_k_zero_all_ones(mode):
    assert coverage_1d_closed(7, 0, *mode).counts.tolist() == [1] * 7


def test_valid_too_short():
    with pytest.raises(ConfigError):
        coverage_1d_closed(4, 2, "valid")
    with pytest.raises(ConfigError):
        coverage_1d_brute(4, 2, "valid")


def test_full_circular_rejected():
    with pytest.raises(ConfigError):
        coverage_1d_closed(8, 1, "full", "circular")


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 7), st.integers(0, 40), st.sampled_from(MODES))
def test_shape_properties(k, extra, mode):
    n = 2 * k + 1 + extra
    c = coverage_1d_closed(n, k, *mode).counts
    assert np.array_equal(c, c[::-1])
    assert c.max() <= 2 * k + 1
    half = c[: (n + 1) // 2]
    assert np.all(np.diff(half) >= 0)
    # every tap that lands inside the image is counted once; taps on zero
    # padding (k(k+1) of them for same, 2k(2k+1) for full) are not
    taps = {"valid": n - 2 * k, "same": n, "full": n + 2 * k}[mode[0]] * (2 * k + 1)
    on_padding = {"valid": 0, "same": k * (k + 1), "full": 2 * k * (2 * k + 1)}[mode[0]]
    if mode[1] == "circular":
        on_padding = 0
    assert c.sum() == taps - on_padding


def test_2d_examples():
    c = coverage_2d(5, 5, 1, 1, "same", "zero").counts
    assert c[0, 0] == 4 and c[0, 2] == 6 and c[2, 2] == 9
    assert np.all(coverage_2d(6, 7, 2, 1, "full").counts == 15)
    assert np.all(coverage_2d(6, 7, 0, 0, "same").counts == 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 8), st.integers(0, 8),
       st.sampled_from(MODES))
def test_2d_separable_matches_window_walk(kh, kw, eh, ew, mode):
    nh, nw = 2 * kh + 1 + eh, 2 * kw + 1 + ew
    assert np.array_equal(coverage_2d(nh, nw, kh, kw, *mode).counts,
                          coverage_2d_brute(nh, nw, kh, kw, *mode).counts)


def test_rows_are_one_indexed():
    rows = list(coverage_2d(2, 3, 0, 0, "same").rows())
    assert rows[0] == (1, 1, 1) and rows[-1] == (2, 3, 1)


def test_boundary_reach_1d():
    assert boundary_reach_1d(coverage_1d_closed(32, 2, "same", "zero").counts) == 2
    assert boundary_reach_1d(coverage_1d_closed(32, 2, "valid").counts) == 4
    assert boundary_reach_1d(coverage_1d_closed(32, 2, "full").counts) == 0
    # a periodic interior is not mistaken for a boundary effect
    assert boundary_reach_1d(np.tile([1, 2], 10), period=2) == 0


def one_layer(boundary, pad, k=2):
    return NetworkSpec((Conv(ConvSpec.square(boundary, pad, k), 3, 4), Logits1x1(4, 2),
                        GlobalMaxPool()))


def test_single_layer_network_reach():
    assert network_coverage(one_layer("same", "zero"), (32, 32)).boundary_reach == 2
    assert network_coverage(one_layer("full", "zero"), (32, 32)).boundary_reach == 0
    cov = network_coverage(one_layer("same", "zero"), (32, 32))
    assert np.array_equal(cov.layers[0].counts, coverage_2d(32, 32, 2, 2, "same").counts)


@pytest.mark.parametrize("mode,zero_reach", [(("same", "zero"), False), (("valid", "zero"), False),
                                             (("same", "circular"), True), (("full", "zero"), True)])
def test_reach_zero_only_without_uneven_boundaries(mode, zero_reach):
    cov = network_coverage(redgreen_net(*mode), (64, 64))
    assert (cov.boundary_reach == 0) == zero_reach


def test_mixed_stack_has_reach():
    spec = NetworkSpec((Conv(ConvSpec.square("full", "zero", 1), 1, 2),
                        Conv(ConvSpec.square("same", "zero", 1), 2, 2),
                        Logits1x1(2, 2), GlobalMaxPool()))
    assert network_coverage(spec, (16, 16)).boundary_reach > 0


def test_receptive_field_of_four_layer_net():
    spec = redgreen_net("same", "zero")
    cov = network_coverage(spec, (64, 64))
    assert cov.receptive_field[:4] == [3, 5, 9, 17]
    assert cov.summary()["receptive_field"] == 17
    convs = [layer.conv for layer in spec.layers if isinstance(layer, Conv)]
    assert receptive_field(convs) == 17


def test_receptive_field_matches_gradient_footprint():
    from borderconv.nn import Model, backward, forward

    spec = redgreen_net("same", "zero", widths=(2, 2, 2, 2))
    model = Model.init(spec, 0)
    for w in model.weights:
        w[...] = np.abs(w) + 0.1  # positive weights keep every path alive
    for b in model.biases:
        b[...] = 1.0
    x = np.random.default_rng(0).random((1, 3, 64, 64)) + 0.5
    _, cache = forward(model, x)
    # route the gradient through one interior output position of the last map
    cache.argmax = np.zeros_like(cache.argmax) + (4 * 8 + 4)
    _, _, gx = backward(model, cache, np.array([[1.0, 0.0]]), need_input=True)
    rows = np.nonzero(np.abs(gx[0]).sum(axis=(0, 2)))[0]
    cols = np.nonzero(np.abs(gx[0]).sum(axis=(0, 1)))[0]
    assert len(rows) == len(cols) == 17
