import math

import numpy as np
import pytest

from procseq import numcore as nc
from procseq.numcore import DimensionError, Parameter, Tensor
from procseq.recurrent import (
    GRUParams,
    LSTMParams,
    LSTMState,
    RNNParams,
    gru_step,
    lstm_gates,
    lstm_step,
    rnn_step,
)


def zero_lstm(D, H):
    return LSTMParams(Parameter(np.zeros((H, 4 * H)), "W"), Parameter(np.zeros((D, 4 * H)), "V"),
                      Parameter(np.zeros(4 * H), "b"))


def zero_gru(D, H):
    return GRUParams(Parameter(np.zeros((H, 3 * H)), "W"), Parameter(np.zeros((D, 3 * H)), "V"),
                     Parameter(np.zeros(3 * H), "b"))


def scalar_rnn(W_h, V, b_h, W_y=1.0, b_y=0.0):
    def p(v, name, shape):
        return Parameter(np.full(shape, v, dtype=float), name)
    return RNNParams(p(W_h, "W_h", (1, 1)), p(V, "V", (1, 1)), p(b_h, "b_h", (1,)),
                     p(W_y, "W_y", (1, 1)), p(b_y, "b_y", (1,)))


def test_rnn_zero_weights_output_is_bias():
    params = RNNParams(*(Parameter(np.zeros(s), n) for s, n in
                         [((3, 3), "W_h"), ((2, 3), "V"), ((3,), "b_h"), ((3, 2), "W_y"), ((2,), "b_y")]))
    params.b_y.data = np.array([0.4, -0.1])
    h, y = rnn_step(np.ones((1, 3)), np.ones((1, 2)), params)
    np.testing.assert_array_equal(h.data, 0.0)
    np.testing.assert_array_equal(y.data, [[0.4, -0.1]])


def test_rnn_scalar_tanh():
    h, _ = rnn_step(np.zeros((1, 1)), np.zeros((1, 1)), scalar_rnn(0.0, 1.0, 0.0))
    assert h.item() == 0.0
    h, _ = rnn_step(np.zeros((1, 1)), np.ones((1, 1)), scalar_rnn(0.0, 1.0, 0.0))
    assert h.item() == pytest.approx(0.76159, abs=1e-5)


def test_lstm_zero_params_hand_value():
    st = lstm_step(LSTMState(Tensor(np.zeros((1, 1))), Tensor(np.ones((1, 1)))), np.zeros((1, 2)), zero_lstm(2, 1))
    assert st.c.item() == pytest.approx(0.5)
    assert st.h.item() == pytest.approx(0.5 * math.tanh(0.5))
    assert st.h.item() == pytest.approx(0.23106, abs=1e-5)


def test_lstm_zero_fixed_point():
    st = lstm_step(LSTMState.zeros(2, 3), np.zeros((2, 4)), zero_lstm(4, 3))
    np.testing.assert_array_equal(st.h.data, 0.0)
    np.testing.assert_array_equal(st.c.data, 0.0)


def test_lstm_init_forget_bias(rng):
    p = LSTMParams.init(3, 5, rng)
    np.testing.assert_array_equal(p.b.data[5:10], 1.0)
    np.testing.assert_array_equal(np.delete(p.b.data, range(5, 10)), 0.0)


def test_lstm_gates_strictly_inside_unit_interval(rng):
    p = LSTMParams.init(3, 4, rng)
    for q in p.parameters():
        q.data = rng.normal(scale=2.0, size=q.shape)
    st = LSTMState(Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 4))))
    _, f, i, o = lstm_gates(st, rng.normal(size=(6, 3)), p)
    for g in (f, i, o):
        assert np.all(g.data > 0) and np.all(g.data < 1)


def test_lstm_large_forget_bias_limit(rng):
    H, D = 3, 2
    p = LSTMParams.init(D, H, rng)
    for q in p.parameters():
        q.data = rng.normal(scale=0.5, size=q.shape)
    p.b.data[H:2 * H] = 20.0
    st = LSTMState(Tensor(rng.normal(size=(1, H))), Tensor(rng.normal(size=(1, H))))
    x = rng.normal(size=(1, D))
    cand, _, i, _ = lstm_gates(st, x, p)
    new = lstm_step(st, x, p)
    np.testing.assert_allclose(new.c.data, st.c.data + i.data * cand.data, atol=1e-6)


def test_gru_zero_fixed_point():
    h = gru_step(np.zeros((1, 3)), np.ones((1, 2)), zero_gru(2, 3))
    np.testing.assert_array_equal(h.data, 0.0)


def test_gru_closed_update_gate_copies_state(rng):
    p = GRUParams.init(2, 3, rng)
    p.b.data[:3] = -50.0
    h0 = rng.normal(size=(1, 3))
    np.testing.assert_allclose(gru_step(h0, rng.normal(size=(1, 2)), p).data, h0, atol=1e-12)


@pytest.mark.parametrize("step, params", [
    (lambda h, x, p: lstm_step(LSTMState(h, h), x, p), LSTMParams.init(3, 4, np.random.default_rng(0))),
    (gru_step, GRUParams.init(3, 4, np.random.default_rng(0))),
    (lambda h, x, p: rnn_step(h, x, p)[0], RNNParams.init(3, 4, 2, np.random.default_rng(0))),
])
def test_dimension_errors(step, params):
    with pytest.raises(DimensionError):
        step(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 5))), params)
    with pytest.raises(DimensionError):
        step(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))), params)


def test_lstm_sum_h_grad_check(rng):
    p = LSTMParams.init(3, 4, rng)
    x = rng.normal(size=(2, 3))
    st = LSTMState(Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(2, 4))))
    assert nc.grad_check(lambda: lstm_step(st, x, p).h.sum(), p.parameters()) < 1e-4


def test_gru_grad_check(rng):
    p = GRUParams.init(3, 4, rng)
    for q in p.parameters():
        q.data = rng.uniform(-1, 1, size=q.shape)
    h = rng.normal(size=(2, 4))
    x = rng.normal(size=(2, 3))
    assert nc.grad_check(lambda: (gru_step(h, x, p) * h).sum(), p.parameters()) < 1e-4


def test_lstm_unrolled_50_steps_grad_check(rng):
    H = 8
    p = LSTMParams.init(3, H, rng)
    for q in p.parameters():
        q.data = rng.uniform(-0.3, 0.3, size=q.shape)
    xs = rng.normal(size=(50, 1, 3))
    w = rng.normal(size=(1, H))

    def loss():
        st = LSTMState.zeros(1, H)
        for x in xs:
            st = lstm_step(st, x, p)
        return (st.h * w).sum()

    assert nc.grad_check(loss, p.parameters(), max_entries=12, rng=rng) <= 1e-4
