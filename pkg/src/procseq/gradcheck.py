"""Finite-difference gradient suites for every differentiable component."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from . import recurrent, extmem
from .numcore import Parameter, Tensor, grad_check

TOLERANCE = 1e-4


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= TOLERANCE)


def _param(rng, shape, name, scale=1.0, away_from_zero=False) -> Parameter:
    x = rng.uniform(-scale, scale, size=shape)
    if away_from_zero:
        x = np.sign(x) * (0.2 + np.abs(x))
    return Parameter(x, name)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * w).sum()


def _primitive_cases(rng) -> list[tuple[str, Callable[[], Tensor], list[Parameter]]]:
    a = _param(rng, (3, 4), "a")
    b = _param(rng, (3, 4), "b")
    row = _param(rng, (4,), "row")
    m = _param(rng, (2, 3, 4), "m")
    n = _param(rng, (4, 5), "n")
    nz = _param(rng, (3, 4), "nz", away_from_zero=True)
    w34 = rng.normal(size=(3, 4))
    w235 = rng.normal(size=(2, 3, 5))
    w3 = rng.normal(size=3)
    w44 = rng.normal(size=(4, 4))
    targets = rng.integers(0, 4, size=3)
    mask = np.array([1.0, 0.0, 1.0])
    idx = np.array([0, 2, 2, 1])
    return [
        ("add", lambda: _weighted(a + row, w34), [a, row]),
        ("sub", lambda: _weighted(a - b, w34), [a, b]),
        ("mul", lambda: _weighted(a * b * row, w34), [a, b, row]),
        ("matmul", lambda: _weighted(m @ n, w235), [m, n]),
        ("sigmoid", lambda: _weighted(nc.sigmoid(a), w34), [a]),
        ("tanh", lambda: _weighted(nc.tanh(a), w34), [a]),
        ("softplus", lambda: _weighted(nc.softplus(a), w34), [a]),
        ("absolute", lambda: _weighted(nc.absolute(nz), w34), [nz]),
        ("softmax", lambda: _weighted(nc.softmax(a), w34), [a]),
        ("concat", lambda: _weighted(nc.concat([a, b], axis=0), np.vstack([w34, w34 * 2])), [a, b]),
        ("stack", lambda: _weighted(nc.stack([a, b]), np.stack([w34, -w34])), [a, b]),
        ("getitem", lambda: _weighted(a[idx], w44), [a]),
        ("slice", lambda: _weighted(nc.slice_(a, 1, 3, axis=-1), w34[:, :2]), [a]),
        ("reshape", lambda: _weighted(nc.reshape(a, (4, 3)), w34.reshape(4, 3)), [a]),
        ("swapaxes", lambda: _weighted(nc.swapaxes(a, 0, 1), w34.T), [a]),
        ("sum", lambda: _weighted(nc.tsum(a, axis=1), w3), [a]),
        ("cosine", lambda: _weighted(nc.cosine_similarity(a, row), w3), [a, row]),
        ("cross_entropy", lambda: nc.cross_entropy(a, targets, mask), [a]),
    ]


def primitives_suite(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, fn, params in _primitive_cases(rng):
        worst = max(worst, grad_check(fn, params))
    return worst


def cells_suite(seed: int = 0, steps: int = 3) -> float:
    rng = np.random.default_rng(seed)
    B, D, H = 2, 3, 4
    xs = rng.normal(size=(steps, B, D))
    w = rng.normal(size=(B, H))
    lstm = recurrent.LSTMParams.init(D, H, rng, prefix="lstm")
    gru = recurrent.GRUParams.init(D, H, rng, prefix="gru")
    rnn = recurrent.RNNParams.init(D, H, 2, rng, prefix="rnn")
    for p in lstm.parameters() + gru.parameters() + rnn.parameters():
        p.data = rng.uniform(-0.5, 0.5, size=p.shape)

    def lstm_loss():
        st = recurrent.LSTMState.zeros(B, H)
        for x in xs:
            st = recurrent.lstm_step(st, Tensor(x), lstm)
        return _weighted(st.h, w) + _weighted(st.c, -w)

    def gru_loss():
        h = Tensor(np.zeros((B, H)))
        for x in xs:
            h = recurrent.gru_step(h, Tensor(x), gru)
        return _weighted(h, w)

    def rnn_loss():
        h = Tensor(np.zeros((B, H)))
        total = Tensor(0.0)
        for x in xs:
            h, y = recurrent.rnn_step(h, Tensor(x), rnn)
            total = total + y.sum()
        return total + _weighted(h, w)

    return max(grad_check(lstm_loss, lstm.parameters()),
               grad_check(gru_loss, gru.parameters()),
               grad_check(rnn_loss, rnn.parameters()))


def memory_suite(seed: int = 0, N: int = 4, W: int = 6, steps: int = 5) -> float:
    """Write/read chain driven by free interface vectors, plus a protected read."""
    rng = np.random.default_rng(seed)
    cfg = extmem.MemoryConfig(N=N, W=W, R=1)
    B = 2
    raws = [_param(rng, (B, cfg.interface_size), f"iface{t}") for t in range(steps)]
    ro = _param(rng, (B, cfg.read_interface_size), "read_only")
    proj = rng.normal(size=(B, cfg.R, W))

    def loss():
        st = extmem.MemoryState.initial(B, cfg)
        total = Tensor(0.0)
        for raw in raws:
            reads, st = extmem.step(st, extmem.InterfaceVector.parse(raw, cfg))
            total = total + _weighted(reads, proj)
        reads, st = extmem.write_protected_step(st, extmem.InterfaceVector.parse(ro, cfg))
        return total + _weighted(reads, proj) + st.usage.sum() + st.link.sum()

    return grad_check(loss, raws + [ro])


def model_suite(seed: int = 0, hidden: int = 8, vocab: int = 5, max_entries: int | None = 40) -> float:
    """Full encode plus teacher-forced decode, both task losses."""
    from .dcwmann import DCwMANN, DCwMANNConfig, loss
    from .eventlog import N_TIME_FEATURES, PrefixSuffixSample

    rng = np.random.default_rng(seed)
    cfg = DCwMANNConfig(input_dim=vocab + N_TIME_FEATURES, vocab_size=vocab,
                        memory=extmem.MemoryConfig(N=4, W=6, R=1), controller_hidden=hidden)
    model = DCwMANN(cfg, seed=seed)
    for p in model.parameters():
        p.data = rng.uniform(-0.5, 0.5, size=p.shape)
    sample = PrefixSuffixSample("gc", [0, 1, 2], [3, vocab - 1], 0.3, 0.9,
                                rng.normal(size=(3, cfg.input_dim)))
    return max(grad_check(lambda: loss(model, sample, task), model.parameters(),
                          max_entries=max_entries, rng=rng)
               for task in ("next", "suffix"))


SUITES: dict[str, Callable[..., float]] = {
    "primitives": primitives_suite,
    "cells": cells_suite,
    "memory": memory_suite,
    "model": model_suite,
}


def run_suites(names=None, seed: int = 0) -> list[SuiteResult]:
    results = []
    for name in names or SUITES:
        t0 = time.perf_counter()
        err = SUITES[name](seed=seed)
        results.append(SuiteResult(name, err, time.perf_counter() - t0))
    return results
