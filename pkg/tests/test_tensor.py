import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from borderconv import tensor as T
from borderconv.errors import ConfigError, CorruptFileError, NonFiniteError, ShapeError, VersionError


def test_relu_zeroes_negatives():
    out = T.elementwise("relu", T.as_tensor([-1.0, 0.0, 2.0]))
    assert out.ravel().tolist() == [0.0, 0.0, 2.0]


def test_add_zero_is_identity():
    x = T.Rng(3).random((2, 3, 4, 5))
    assert np.array_equal(T.elementwise("add", x, T.zeros(x.shape)), x)


def test_scale():
    out = T.elementwise("scale", T.as_tensor([1.0, 2.0, 3.0]), 2.0)
    assert out.ravel().tolist() == [2.0, 4.0, 6.0]


def test_binary_shape_mismatch():
    with pytest.raises(ShapeError):
        T.elementwise("add", T.zeros((1, 1, 1, 3)), T.zeros((1, 1, 1, 4)))


def test_unknown_op():
    with pytest.raises(ConfigError):
        T.elementwise("div", T.zeros((1, 1, 1, 1)), T.zeros((1, 1, 1, 1)))


def test_overflow_reports_non_finite():
    with pytest.raises(NonFiniteError):
        T.elementwise("scale", T.as_tensor([1e308]), 10.0)


def test_as_tensor_rank():
    assert T.as_tensor([1, 2, 3]).shape == (1, 1, 1, 3)
    with pytest.raises(ShapeError):
        T.as_tensor(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        T.as_tensor(np.zeros(5), shape=(1, 1, 2, 2))


def test_uniform_init_reproducible():
    a = T.uniform_init(T.Rng(0), (1, 1, 1, 4), 0.0, 1.0)
    b = T.uniform_init(T.Rng(0), (1, 1, 1, 4), 0.0, 1.0)
    assert np.array_equal(a, b)
    assert np.all((a >= 0.0) & (a < 1.0))


def test_uniform_init_empty_interval():
    with pytest.raises(ConfigError):
        T.uniform_init(T.Rng(0), (1, 1, 1, 4), 0.5, 0.5)


def test_seeds_differ():
    a = T.uniform_init(T.Rng(0), (1, 1, 1, 8), 0.0, 1.0)
    b = T.uniform_init(T.Rng(1), (1, 1, 1, 8), 0.0, 1.0)
    assert not np.array_equal(a, b)


def test_streams_are_independent_of_call_order():
    r = T.Rng(7)
    first = r.spawn(5).random(4)
    r.random(100)
    assert np.array_equal(r.spawn(5).random(4), first)


def test_integers_inclusive():
    draws = T.Rng(0).integers(-1, 1, size=2000)
    assert set(np.unique(draws).tolist()) == {-1, 0, 1}


def test_rng_pinned_output():
    # guards against a silent change of bit generator
    got = T.Rng(0).random(3)
    assert np.array_equal(got, np.random.Generator(np.random.Philox(key=0)).random(3))


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.integers(1, 4)] * 4), st.data())
def test_row_major_addressing(shape, data):
    n, c, h, w = (data.draw(st.integers(0, s - 1)) for s in shape)
    x = T.zeros(shape)
    x[n, c, h, w] = 1.0
    assert int(np.argmax(x.ravel())) == T.flat_index(shape, n, c, h, w)


@settings(max_examples=50, deadline=None)
@given(st.tuples(*[st.integers(0, 3)] * 4), st.integers(0, 2**32))
def test_bt_round_trip_bit_exact(shape, seed):
    x = T.Rng(seed).random(shape) * 1e6 - 5e5
    y = T.from_bytes(T.to_bytes(x))
    assert y.shape == x.shape
    assert x.tobytes() == y.tobytes()


def test_bt_layout():
    x = T.as_tensor([1.5, -2.0], shape=(1, 1, 1, 2))
    raw = T.to_bytes(x)
    assert raw[:4] == b"BTEN" and raw[4] == 1
    assert np.frombuffer(raw[5:37], "<u8").tolist() == [1, 1, 1, 2]
    assert np.frombuffer(raw[37:], "<f8").tolist() == [1.5, -2.0]


def test_bt_rejects_bad_files(tmp_path):
    raw = T.to_bytes(T.zeros((1, 1, 2, 2)))
    with pytest.raises(CorruptFileError):
        T.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(VersionError):
        T.from_bytes(raw[:4] + b"\x02" + raw[5:])
    with pytest.raises(CorruptFileError):
        T.from_bytes(raw[:-1])
    with pytest.raises(CorruptFileError):
        T.from_bytes(raw[:10])
    p = tmp_path / "x.bt"
    p.write_bytes(raw + b"\0")
    with pytest.raises(CorruptFileError):
        T.load(p)


def test_save_load(tmp_path):
    x = T.Rng(1).random((2, 1, 3, 3))
    T.save(x, tmp_path / "a.bt")
    assert np.array_equal(T.load(tmp_path / "a.bt"), x)
