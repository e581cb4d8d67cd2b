import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import dense_attention, loop_matmul, pixel_bilinear
from vpguide import autograd as ag
from vpguide.tensor import Tensor, bilinear_resize, cross_attention, grad_check, matmul, resize_matrix, softmax_rows


def test_rank_and_extent_validation():
    with pytest.raises(ValueError):
        Tensor(np.float32(1.0))
    with pytest.raises(ValueError):
        Tensor(np.zeros((1, 1, 1, 1)))
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 0)))


def test_tensor_is_read_only():
    t = Tensor(np.arange(6).reshape(2, 3))
    with pytest.raises(ValueError):
        t.data[0, 0] = 5
    copy = t.numpy()
    copy[0, 0] = 5
    assert t.data[0, 0] == 0


def test_ctnsr_layout_is_exact():
    t = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    expected = b"CTNSR" + bytes([1, 2]) + struct.pack("<II", 2, 3) + np.arange(6, dtype="<f4").tobytes()
    assert t.to_bytes() == expected


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_ctnsr_roundtrip(arr):
    t = Tensor(arr)
    back = Tensor.from_bytes(t.to_bytes())
    assert back == t
    assert back.to_bytes() == t.to_bytes()


def test_ctnsr_rejects_corrupt_input():
    good = Tensor(np.ones(4)).to_bytes()
    with pytest.raises(ValueError, match="magic"):
        Tensor.from_bytes(b"XXXXX" + good[5:])
    with pytest.raises(ValueError, match="version"):
        Tensor.from_bytes(good[:5] + bytes([9]) + good[6:])
    with pytest.raises(ValueError, match="payload"):
        Tensor.from_bytes(good[:-1])


def test_save_load(tmp_path):
    t = Tensor(np.linspace(0, 1, 24).reshape(2, 3, 4))
    t.save(tmp_path / "x.ctnsr")
    assert Tensor.load(tmp_path / "x.ctnsr") == t


def test_matmul_matches_loop(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(np.asarray(matmul(a, b)), loop_matmul(a, b), rtol=1e-5, atol=1e-6)
    with pytest.raises(ValueError, match="mismatch"):
        matmul(a, a)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=8),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    s = np.asarray(softmax_rows(x), dtype=np.float64)
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_softmax_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        softmax_rows(np.array([[1.0, np.nan]]))


@pytest.mark.parametrize("residual", [False, True])
@pytest.mark.parametrize("use_bias", [False, True])
def test_cross_attention_matches_dense_formula(rng, residual, use_bias):
    q, k, v = rng.normal(size=(4, 3)), rng.normal(size=(4, 7)), rng.normal(size=(4, 7))
    bias = rng.normal(size=7) if use_bias else None
    got = np.asarray(cross_attention(q, k, v, bias=bias, residual=residual), dtype=np.float64)
    np.testing.assert_allclose(got, dense_attention(q, k, v, bias, residual), rtol=1e-5, atol=1e-6)


def test_cross_attention_shape_errors(rng):
    q = rng.normal(size=(4, 3))
    with pytest.raises(ValueError):
        cross_attention(q, rng.normal(size=(3, 5)), rng.normal(size=(3, 5)))
    with pytest.raises(ValueError):
        cross_attention(q, rng.normal(size=(4, 5)), rng.normal(size=(4, 6)))
    with pytest.raises(ValueError, match="bias"):
        cross_attention(q, rng.normal(size=(4, 5)), rng.normal(size=(4, 5)), bias=np.zeros(4))


def test_single_key_attention_returns_that_value(rng):
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(3, 1)), rng.normal(size=(3, 1))
    out = np.asarray(cross_attention(q, k, v))
    np.testing.assert_allclose(out, np.repeat(v, 4, axis=1), rtol=1e-6)


def test_resize_matrix_rows_are_stochastic():
    for n_in, n_out in [(4, 8), (8, 4), (5, 7), (1, 3), (3, 1)]:
        m = resize_matrix(n_in, n_out)
        np.testing.assert_allclose(m.sum(axis=1), 1.0)
        assert np.all(m >= 0)


@pytest.mark.parametrize("shape,out", [((2, 4, 6), (8, 12)), ((1, 8, 8), (4, 4)), ((3, 5, 7), (6, 3)),
                                       ((1, 1, 1), (3, 2))])
def test_bilinear_matches_pixel_oracle(rng, shape, out):
    x = rng.normal(size=shape).astype(np.float32)
    np.testing.assert_allclose(np.asarray(bilinear_resize(x, *out)), pixel_bilinear(x.astype(np.float64), *out),
                               rtol=1e-5, atol=1e-5)


def test_bilinear_identity_and_constant(rng):
    x = rng.normal(size=(2, 5, 6)).astype(np.float32)
    assert bilinear_resize(x, 5, 6) == Tensor(x)
    const = np.full((1, 3, 3), 7.0, dtype=np.float32)
    np.testing.assert_allclose(np.asarray(bilinear_resize(const, 11, 4)), 7.0, rtol=1e-6)


def test_bilinear_errors():
    with pytest.raises(ValueError):
        bilinear_resize(np.zeros((3, 3)), 2, 2)
    with pytest.raises(ValueError):
        bilinear_resize(np.zeros((1, 3, 3)), 0, 2)


def test_grad_check_validates_eps(rng):
    with pytest.raises(ValueError):
        grad_check(lambda v: ag.total(v), rng.normal(size=3), eps=1e-6)


def test_grad_check_detects_a_wrong_gradient(rng):
    def broken(v):
        out = ag.total(ag.mul(v, v))
        # forward is sum(v^2) but the recorded backward pretends it is sum(v)
        return ag._make(out.value, (v,), lambda g: v._accum(g * np.ones_like(v.value)))

    assert grad_check(broken, rng.normal(size=4) + 3.0) > 0.5
