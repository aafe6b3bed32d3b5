"""Differentiable external memory with content addressing, allocation and temporal links.

Shapes carry a leading batch axis B:

    M              (B, N, W)
    usage          (B, N)
    precedence     (B, N)
    link           (B, N, N)   link[i, j]: slot i was written right after slot j
    write_weight   (B, N)
    read_weights   (B, R, N)
    read_vectors   (B, R, W)

A write step updates usage from the previous write/read weightings, computes
an allocation weighting from the sorted usage, mixes it with a content lookup,
writes, and refreshes the link matrix and precedence. Reads blend backward,
content and forward weightings by per-head mode probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import (
    Tensor,
    as_tensor,
    cosine_similarity,
    reshape,
    sigmoid,
    slice_,
    softmax,
    softplus,
    swapaxes,
    tanh,
)

# read-mode order along the last axis of InterfaceVector.read_modes
BACKWARD, CONTENT, FORWARD = 0, 1, 2


@dataclass(frozen=True)
class MemoryConfig:
    N: int = 5
    W: int = 20
    R: int = 1

    def __post_init__(self):
        if min(self.N, self.W, self.R) < 1:
            raise ValueError(f"memory dimensions must be positive, got {self}")

    @property
    def read_interface_size(self) -> int:
        return self.R * self.W + 4 * self.R

    @property
    def interface_size(self) -> int:
        return self.read_interface_size + 3 * self.W + self.R + 3


@dataclass
class MemoryState:
    M: Tensor
    usage: Tensor
    precedence: Tensor
    link: Tensor
    write_weight: Tensor
    read_weights: Tensor
    read_vectors: Tensor

    @classmethod
    def initial(cls, batch: int, config: MemoryConfig) -> "MemoryState":
        N, W, R = config.N, config.W, config.R
        return cls(
            M=Tensor(np.zeros((batch, N, W))),
            usage=Tensor(np.zeros((batch, N))),
            precedence=Tensor(np.zeros((batch, N))),
            link=Tensor(np.zeros((batch, N, N))),
            write_weight=Tensor(np.zeros((batch, N))),
            read_weights=Tensor(np.zeros((batch, R, N))),
            read_vectors=Tensor(np.zeros((batch, R, W))),
        )

    def select(self, index) -> "MemoryState":
        """Rows ``index`` of the batch (differentiable gather)."""
        return MemoryState(*(getattr(self, f)[index] for f in _FIELDS))


_FIELDS = ("M", "usage", "precedence", "link", "write_weight", "read_weights", "read_vectors")


@dataclass
class InterfaceVector:
    read_keys: Tensor  # (B, R, W)
    read_strengths: Tensor  # (B, R)
    read_modes: Tensor  # (B, R, 3), rows on the simplex
    write_key: Tensor | None = None  # (B, W)
    write_strength: Tensor | None = None  # (B,)
    erase: Tensor | None = None  # (B, W)
    write_vector: Tensor | None = None  # (B, W)
    free_gates: Tensor | None = None  # (B, R)
    alloc_gate: Tensor | None = None  # (B,)
    write_gate: Tensor | None = None  # (B,)

    @classmethod
    def parse(cls, raw, config: MemoryConfig) -> "InterfaceVector":
        """Split a raw controller emission (B, size) and apply the domain maps.

        A raw vector of ``read_interface_size`` yields read fields only.
        """
        raw = as_tensor(raw)
        B = raw.shape[0]
        R, W = config.R, config.W
        size = raw.shape[-1]
        if size not in (config.interface_size, config.read_interface_size):
            raise ValueError(
                f"interface width {size} matches neither {config.interface_size} "
                f"(read/write) nor {config.read_interface_size} (read-only)"
            )
        pos = 0

        def take(n):
            nonlocal pos
            piece = slice_(raw, pos, pos + n)
            pos += n
            return piece

        iv = cls(
            read_keys=reshape(take(R * W), (B, R, W)),
            read_strengths=1.0 + softplus(take(R)),
            read_modes=softmax(reshape(take(3 * R), (B, R, 3))),
        )
        if size == config.read_interface_size:
            return iv
        iv.write_key = take(W)
        iv.write_strength = reshape(1.0 + softplus(take(1)), (B,))
        iv.erase = sigmoid(take(W))
        iv.write_vector = tanh(take(W))
        iv.free_gates = sigmoid(take(R))
        iv.alloc_gate = reshape(sigmoid(take(1)), (B,))
        iv.write_gate = reshape(sigmoid(take(1)), (B,))
        return iv


def content_address(M, keys, strengths) -> Tensor:
    """Sharpened softmax over cosine similarity between keys and memory rows.

    ``M`` is (B, N, W), ``keys`` (B, K, W) and ``strengths`` (B, K); the
    result is (B, K, N). Unbatched inputs (N, W), (W,), scalar also work and
    return (N,).
    """
    M, keys, strengths = as_tensor(M), as_tensor(keys), as_tensor(strengths)
    if M.ndim == 2:
        out = content_address(reshape(M, (1,) + M.shape), reshape(keys, (1, 1, -1)),
                              reshape(strengths, (1, 1)))
        return reshape(out, (M.shape[0],))
    B, K, W = keys.shape
    sims = cosine_similarity(reshape(keys, (B, K, 1, W)), reshape(M, (B, 1) + M.shape[1:]))
    return softmax(sims * reshape(strengths, (B, K, 1)), axis=-1)


def allocation_weighting(usage) -> Tensor:
    """Direct writes to the least used slots.

    With slots sorted by ascending usage (stable, so ties keep index order),
    slot j in sorted position gets ``(1 - u_j) * prod(u of earlier slots)``.
    The sort permutation is treated as a constant in backward.
    """
    usage = as_tensor(usage)
    squeeze = usage.ndim == 1
    u = usage.data[None] if squeeze else usage.data
    order = np.argsort(u, axis=-1, kind="stable")
    s = np.take_along_axis(u, order, -1)
    excl = np.concatenate([np.ones_like(s[:, :1]), np.cumprod(s[:, :-1], axis=-1)], axis=-1)
    a_sorted = (1.0 - s) * excl
    a = np.empty_like(a_sorted)
    np.put_along_axis(a, order, a_sorted, -1)
    out = Tensor(a[0] if squeeze else a, (usage,))

    def backward(g):
        g2 = g[None] if squeeze else g
        gs = np.take_along_axis(g2, order, -1)
        t = gs * (1.0 - s)
        n = s.shape[-1]
        tail = np.zeros_like(s)
        for k in range(n - 2, -1, -1):
            tail[:, k] = t[:, k + 1] + s[:, k + 1] * tail[:, k + 1]
        grad_sorted = excl * (tail - gs)
        grad = np.empty_like(grad_sorted)
        np.put_along_axis(grad, order, grad_sorted, -1)
        usage_grad = grad[0] if squeeze else grad
        if usage.requires_grad:
            usage.grad = usage_grad if usage.grad is None else usage.grad + usage_grad

    out._backward = backward
    return out


def _outer(a: Tensor, b: Tensor) -> Tensor:
    """(B, N) x (B, W) -> (B, N, W)."""
    B, N = a.shape
    return reshape(a, (B, N, 1)) * reshape(b, (B, 1, b.shape[-1]))


def write(state: MemoryState, iv: InterfaceVector) -> MemoryState:
    B, N = state.usage.shape
    # retention from free gates applied to last step's read locations
    freed = 1.0 - reshape(iv.free_gates, iv.free_gates.shape + (1,)) * state.read_weights
    retention = freed[:, 0, :]
    for r in range(1, freed.shape[1]):
        retention = retention * freed[:, r, :]
    prev_w = state.write_weight
    usage = (state.usage + prev_w - state.usage * prev_w) * retention

    alloc = allocation_weighting(usage)
    lookup = content_address(state.M, reshape(iv.write_key, (B, 1, -1)),
                             reshape(iv.write_strength, (B, 1)))
    lookup = reshape(lookup, (B, N))
    ga = reshape(iv.alloc_gate, (B, 1))
    gw = reshape(iv.write_gate, (B, 1))
    ww = gw * (ga * alloc + (1.0 - ga) * lookup)

    M = state.M * (1.0 - _outer(ww, iv.erase)) + _outer(ww, iv.write_vector)

    wi = reshape(ww, (B, N, 1))
    wj = reshape(ww, (B, 1, N))
    off_diag = 1.0 - np.eye(N)
    link = ((1.0 - wi - wj) * state.link + wi * reshape(state.precedence, (B, 1, N))) * off_diag
    precedence = (1.0 - ww.sum(axis=-1, keepdims=True)) * state.precedence + ww
    return MemoryState(M, usage, precedence, link, ww, state.read_weights, state.read_vectors)


def _read_weights(state: MemoryState, iv: InterfaceVector) -> Tensor:
    prev = swapaxes(state.read_weights, -1, -2)  # (B, N, R)
    fwd = swapaxes(state.link @ prev, -1, -2)
    bwd = swapaxes(swapaxes(state.link, -1, -2) @ prev, -1, -2)
    content = content_address(state.M, iv.read_keys, iv.read_strengths)
    modes = iv.read_modes
    B, R, _ = modes.shape
    pick = lambda m: reshape(slice_(modes, m, m + 1), (B, R, 1))  # noqa: E731
    return pick(BACKWARD) * bwd + pick(CONTENT) * content + pick(FORWARD) * fwd


def read(state: MemoryState, iv: InterfaceVector) -> tuple[Tensor, MemoryState]:
    weights = _read_weights(state, iv)
    vectors = weights @ state.M
    new = MemoryState(state.M, state.usage, state.precedence, state.link,
                      state.write_weight, weights, vectors)
    return vectors, new


def step(state: MemoryState, iv: InterfaceVector) -> tuple[Tensor, MemoryState]:
    """Write then read: one encoding-phase memory cycle."""
    return read(write(state, iv), iv)


def write_protected_step(state: MemoryState, iv: InterfaceVector) -> tuple[Tensor, MemoryState]:
    """Read without touching M, usage, precedence, link or the write weighting."""
    return read(state, iv)
