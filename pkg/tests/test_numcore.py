import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from procseq import numcore as nc
from procseq.numcore import Adam, AdamState, DimensionError, Parameter, Tensor, TrainingError


def test_sigmoid_at_zero():
    assert nc.sigmoid(Tensor(0.0)).item() == 0.5


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(nc.softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_matmul_of_ones():
    out = Tensor(np.ones((2, 3))) @ Tensor(np.ones((3, 2)))
    np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))


@pytest.mark.parametrize("op, a, b", [
    (nc.matmul, (2, 3), (2, 3)),
    (nc.add, (2, 3), (3, 2)),
    (nc.mul, (4,), (3,)),
])
def test_shape_mismatch_names_both_shapes(op, a, b):
    with pytest.raises(DimensionError) as info:
        op(Tensor(np.ones(a)), Tensor(np.ones(b)))
    assert str(a) in str(info.value) and str(b) in str(info.value)


def test_concat_and_slice_round_trip():
    a, b = Tensor(np.arange(6.0).reshape(2, 3)), Tensor(np.arange(4.0).reshape(2, 2))
    c = nc.concat([a, b])
    np.testing.assert_array_equal(nc.slice_(c, 0, 3).data, a.data)
    np.testing.assert_array_equal(nc.slice_(c, 3, 5).data, b.data)


finite = st.floats(-50, 50, allow_nan=False)


@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(-100, 100))
def test_softmax_properties(x, shift):
    p = nc.softmax_array(x)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-9
    np.testing.assert_allclose(nc.softmax_array(x + shift), p, atol=1e-12)


@given(arrays(np.float64, 5, elements=st.floats(-10, 10)), arrays(np.float64, 5, elements=st.floats(-10, 10)))
def test_cosine_bounded(a, b):
    c = nc.cosine_similarity(Tensor(a), Tensor(b)).item()
    assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12


def test_cosine_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert nc.cosine_similarity(Tensor(v), Tensor(v)).item() == pytest.approx(1.0, abs=1e-12)
    assert nc.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
    assert nc.cosine_similarity(Tensor(np.zeros(2)), Tensor([1.0, 0.0])).item() == 0.0


def test_cosine_zero_vector_has_finite_gradient():
    a = Parameter(np.zeros(3), "a")
    b = Parameter(np.array([1.0, 0.0, 0.0]), "b")
    nc.backward(nc.cosine_similarity(a, b))
    assert np.all(np.isfinite(a.grad)) and np.all(np.isfinite(b.grad))


def test_adam_zero_gradient_fresh_state_is_noop():
    p = Parameter(np.array([1.5, -2.0]), "p")
    opt = Adam([p])
    opt.step()
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    assert opt.states["p"].t == 1


def test_adam_zero_gradient_after_updates_still_moves():
    # the no-op holds only while the moments are zero; momentum carries on
    p = Parameter(np.array([1.0]), "p")
    opt = Adam([p])
    p.grad = np.array([1.0])
    opt.step()
    before = p.data.copy()
    opt.step()
    assert p.data[0] < before[0]


def test_adam_first_step_hand_value():
    # t=1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    p = Parameter(np.array(0.0), "p")
    opt = Adam([p])
    p.grad = np.array(1.0)
    opt.step()
    assert p.data == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-12)
    assert np.all(p.grad == 0)


def test_adam_functional_matches_class():
    a, b = Parameter(np.array([0.2, 0.4]), "w"), Parameter(np.array([0.2, 0.4]), "w")
    states: dict[str, AdamState] = {}
    opt = Adam([b])
    for g in ([1.0, -2.0], [0.5, 0.5]):
        a.grad, b.grad = np.array(g), np.array(g)
        nc.adam_step([a], states)
        opt.step()
    np.testing.assert_array_equal(a.data, b.data)


def test_adam_non_finite_gradient_names_parameter():
    p = Parameter(np.zeros(2), "enc.bad")
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(TrainingError, match="enc.bad"):
        Adam([p]).step()


def test_adam_rejects_duplicate_names():
    with pytest.raises(ValueError):
        Adam([Parameter(np.zeros(1), "x"), Parameter(np.zeros(1), "x")])


def test_clip_grad_norm_scales_to_max():
    p = Parameter(np.zeros(2), "p")
    p.grad = np.array([30.0, 40.0])
    norm = nc.clip_grad_norm([p], 10.0)
    assert norm == 50.0
    np.testing.assert_allclose(p.grad, [6.0, 8.0])


def test_uniform_init_range(rng):
    w = nc.uniform_init(rng, (50, 50))
    assert w.min() >= -0.08 and w.max() <= 0.08


def test_grad_check_quadratic():
    theta = Parameter(np.array(3.0), "theta")
    err = nc.grad_check(lambda: (theta * theta).sum() * 0.5, [theta])
    assert err < 1e-9
    nc.backward((theta * theta).sum() * 0.5)
    assert theta.grad == pytest.approx(3.0)


def test_grad_check_sigmoid_chain(rng):
    W1 = Parameter(rng.normal(size=(3, 4)), "W1")
    W2 = Parameter(rng.normal(size=(4, 2)), "W2")
    x = Tensor(rng.normal(size=(5, 3)))
    err = nc.grad_check(lambda: nc.sigmoid(nc.sigmoid(x @ W1) @ W2).sum(), [W1, W2])
    assert err < 1e-4


def test_relative_error_with_doubled_gradient():
    # |a - n| / max(|a|, |n|) with a = 2n is exactly 1/2
    assert nc.relative_error(2.0, 1.0) == 0.5
    assert nc.relative_error(-4.0, -2.0) == 0.5


def test_grad_check_detects_doubled_gradient():
    def doubled_square(x):
        def back(g):
            nc._accumulate(x, g * 4.0 * x.data)
        return Tensor(x.data ** 2, (x,), back)

    theta = Parameter(np.array([1.3, -0.7]), "theta")
    err = nc.grad_check(lambda: doubled_square(theta).sum(), [theta])
    assert err == pytest.approx(0.5, abs=1e-6)


def test_grad_check_restores_parameters(rng):
    w = Parameter(rng.normal(size=(3,)), "w")
    before = w.data.copy()
    nc.grad_check(lambda: nc.tanh(w).sum(), [w])
    np.testing.assert_array_equal(w.data, before)
    assert w.data.dtype == np.float64


@pytest.mark.parametrize("seed", range(5))
def test_primitives_match_finite_differences_on_random_points(seed):
    rng = np.random.default_rng(seed)
    a = Parameter(rng.uniform(-2, 2, size=(3, 4)), "a")
    b = Parameter(rng.uniform(-2, 2, size=(4,)), "b")
    w = rng.normal(size=(3, 4))
    for fn in (nc.sigmoid, nc.tanh, nc.softplus, nc.softmax):
        assert nc.grad_check(lambda: (fn(a * b) * w).sum(), [a, b]) <= 1e-4
    assert nc.grad_check(lambda: (nc.cosine_similarity(a, b) * w[:, 0]).sum(), [a, b]) <= 1e-4


def test_cross_entropy_uniform_is_log_v():
    logits = Tensor(np.zeros((2, 7)))
    ce = nc.cross_entropy(logits, np.array([0, 3])).item()
    assert ce == pytest.approx(2 * math.log(7))


def test_backward_accumulates_shared_inputs():
    x = Parameter(np.array([2.0]), "x")
    nc.backward((x * x + x).sum())
    assert x.grad[0] == pytest.approx(5.0)
