"""Vanilla RNN, LSTM and GRU cells built on the numcore tape.

All cells take batched inputs: ``x`` is (B, input_dim) and hidden vectors are
(B, hidden). Gate blocks are stored stacked along the output axis so a step
costs two matmuls instead of eight; block order is documented per cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import (
    DimensionError,
    Parameter,
    Tensor,
    as_tensor,
    sigmoid,
    slice_,
    tanh,
    uniform_init,
)

FORGET_BIAS = 1.0


def _check(x: Tensor, V: Parameter, h: Tensor, W: Parameter, cell: str) -> None:
    if x.shape[-1] != V.shape[0]:
        raise DimensionError(f"{cell}: input shape {x.shape} does not match V {V.shape}")
    if h.shape[-1] != W.shape[0]:
        raise DimensionError(f"{cell}: hidden shape {h.shape} does not match W {W.shape}")


# ---------------------------------------------------------------------------
# vanilla RNN


@dataclass
class RNNParams:
    W_h: Parameter
    V: Parameter
    b_h: Parameter
    W_y: Parameter
    b_y: Parameter

    @classmethod
    def init(cls, input_dim: int, hidden: int, output_dim: int, rng: np.random.Generator,
             prefix: str = "rnn") -> "RNNParams":
        return cls(
            W_h=Parameter(uniform_init(rng, (hidden, hidden)), f"{prefix}.W_h"),
            V=Parameter(uniform_init(rng, (input_dim, hidden)), f"{prefix}.V"),
            b_h=Parameter(np.zeros(hidden), f"{prefix}.b_h"),
            W_y=Parameter(uniform_init(rng, (hidden, output_dim)), f"{prefix}.W_y"),
            b_y=Parameter(np.zeros(output_dim), f"{prefix}.b_y"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.W_h, self.V, self.b_h, self.W_y, self.b_y]


def rnn_step(h, x, params: RNNParams, activation=tanh) -> tuple[Tensor, Tensor]:
    """One vanilla step: returns the new hidden state and the output."""
    h, x = as_tensor(h), as_tensor(x)
    _check(x, params.V, h, params.W_h, "rnn_step")
    h_new = activation(h @ params.W_h + x @ params.V + params.b_h)
    y = h_new @ params.W_y + params.b_y
    return h_new, y


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LSTMState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LSTMState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


@dataclass
class LSTMParams:
    """Gate blocks stacked in the order candidate, forget, input, output.

    ``W`` is (hidden, 4*hidden), ``V`` is (input_dim, 4*hidden), ``b`` is (4*hidden,).
    """

    W: Parameter
    V: Parameter
    b: Parameter

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.V.shape[0]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator,
             prefix: str = "lstm") -> "LSTMParams":
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = FORGET_BIAS
        return cls(
            W=Parameter(uniform_init(rng, (hidden, 4 * hidden)), f"{prefix}.W"),
            V=Parameter(uniform_init(rng, (input_dim, 4 * hidden)), f"{prefix}.V"),
            b=Parameter(b, f"{prefix}.b"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.W, self.V, self.b]


def lstm_gates(state: LSTMState, x, params: LSTMParams):
    x = as_tensor(x)
    _check(x, params.V, state.h, params.W, "lstm_step")
    H = params.hidden
    z = state.h @ params.W + x @ params.V + params.b
    cand = tanh(slice_(z, 0, H))
    gates = sigmoid(slice_(z, H, 4 * H))
    f = slice_(gates, 0, H)
    i = slice_(gates, H, 2 * H)
    o = slice_(gates, 2 * H, 3 * H)
    return cand, f, i, o


def lstm_step(state: LSTMState, x, params: LSTMParams) -> LSTMState:
    cand, f, i, o = lstm_gates(state, x, params)
    c = f * state.c + i * cand
    h = o * tanh(c)
    return LSTMState(h, c)


# ---------------------------------------------------------------------------
# GRU


@dataclass
class GRUParams:
    """Blocks stacked in the order update, reset, candidate.

    The reset gate scales the previous hidden state before it enters the
    candidate's recurrent term, so the candidate block of ``W`` is applied
    separately.
    """

    W: Parameter
    V: Parameter
    b: Parameter

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator,
             prefix: str = "gru") -> "GRUParams":
        return cls(
            W=Parameter(uniform_init(rng, (hidden, 3 * hidden)), f"{prefix}.W"),
            V=Parameter(uniform_init(rng, (input_dim, 3 * hidden)), f"{prefix}.V"),
            b=Parameter(np.zeros(3 * hidden), f"{prefix}.b"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.W, self.V, self.b]


def gru_step(h, x, params: GRUParams) -> Tensor:
    h, x = as_tensor(h), as_tensor(x)
    _check(x, params.V, h, params.W, "gru_step")
    H = params.hidden
    xv = x @ params.V + params.b
    W_zr = slice_(params.W, 0, 2 * H)
    W_c = slice_(params.W, 2 * H, 3 * H)
    zr = sigmoid(slice_(xv, 0, 2 * H) + h @ W_zr)
    z = slice_(zr, 0, H)
    r = slice_(zr, H, 2 * H)
    cand = tanh(slice_(xv, 2 * H, 3 * H) + (r * h) @ W_c)
    return (1.0 - z) * h + z * cand
