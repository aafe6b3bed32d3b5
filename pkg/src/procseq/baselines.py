"""Baselines: trie-accelerated k-NN over prefixes and LSTM/GRU language models."""

from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metrics import levenshtein, normalized_distance
from .numcore import Parameter, Tensor, concat, cross_entropy, reshape, softmax_array, uniform_init
from .recurrent import GRUParams, LSTMParams, LSTMState, gru_step, lstm_step
from .training import MAX_EPOCHS, PATIENCE, TrainingReport, bucket_batches, fit

# ---------------------------------------------------------------------------
# trie index


@dataclass
class TrieNode:
    children: dict[int, "TrieNode"] = field(default_factory=dict)
    ids: list[int] = field(default_factory=list)  # samples whose prefix passes through
    terminal: list[int] = field(default_factory=list)  # samples whose prefix ends here
    depth: int = 0
    max_depth: int = 0  # deepest terminal in this subtree


@dataclass
class Neighbor:
    sample_id: int
    distance: float


@dataclass
class KnnResult:
    neighbors: list[Neighbor]
    truncated: bool = False  # k exceeded the index size

    @property
    def ids(self) -> list[int]:
        return [n.sample_id for n in self.neighbors]


class TrieIndex:
    """Prefix trie over training prefixes with per-sample payloads."""

    def __init__(self):
        self.root = TrieNode()
        self.prefixes: list[list[int]] = []
        self.suffixes: list[list[int]] = []
        self.remaining: list[float] = []
        self.node_count = 1

    def __len__(self) -> int:
        return len(self.prefixes)

    def add(self, prefix: Sequence[int], suffix: Sequence[int] = (), remaining: float = 0.0) -> int:
        sid = len(self.prefixes)
        self.prefixes.append(list(prefix))
        self.suffixes.append(list(suffix))
        self.remaining.append(float(remaining))
        node = self.root
        node.ids.append(sid)
        node.max_depth = max(node.max_depth, len(prefix))
        for sym in prefix:
            child = node.children.get(sym)
            if child is None:
                child = node.children[sym] = TrieNode(depth=node.depth + 1)
                self.node_count += 1
            node = child
            node.ids.append(sid)
            node.max_depth = max(node.max_depth, len(prefix))
        node.terminal.append(sid)
        return sid

    @classmethod
    def build(cls, samples) -> "TrieIndex":
        """Index PrefixSuffixSamples; suffixes are stored without the END symbol."""
        index = cls()
        for s in samples:
            index.add(s.prefix_symbols, s.target_suffix[:-1], s.target_remaining_time)
        return index

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {"prefixes": self.prefixes, "suffixes": self.suffixes, "remaining": self.remaining}

    @classmethod
    def from_dict(cls, d: dict) -> "TrieIndex":
        index = cls()
        for p, s, r in zip(d["prefixes"], d["suffixes"], d["remaining"]):
            index.add(p, s, r)
        return index


def _normalized(d: int, n: int, m: int) -> float:
    longest = max(n, m)
    return 0.0 if longest == 0 else d / longest


def knn_retrieve(index: TrieIndex, query: Sequence[int], k: int) -> KnnResult:
    """The ``k`` indexed prefixes nearest to ``query`` by normalized Levenshtein.

    Ties go to the smaller sample id. The trie shares DP rows across common
    prefixes, and a subtree is skipped once the minimum of its DP row divided
    by the longest length it can reach exceeds the current k-th distance.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(index) == 0:
        raise ValueError("empty index")
    truncated = k > len(index)
    k = min(k, len(index))
    q = list(query)
    n = len(q)
    best: list[tuple[float, int]] = []

    def offer(dist: float, sid: int):
        item = (dist, sid)
        if len(best) < k:
            bisect.insort(best, item)
        elif item < best[-1]:
            best.pop()
            bisect.insort(best, item)

    stack = [(index.root, list(range(n + 1)))]
    while stack:
        node, row = stack.pop()
        for sid in node.terminal:
            offer(_normalized(row[n], n, node.depth), sid)
        for sym, child in node.children.items():
            new = [row[0] + 1]
            for j in range(1, n + 1):
                new.append(min(new[j - 1] + 1, row[j] + 1, row[j - 1] + (q[j - 1] != sym)))
            if len(best) == k:
                bound = min(new) / max(n, child.max_depth)
                if bound > best[-1][0]:
                    continue
            stack.append((child, new))
    return KnnResult([Neighbor(sid, d) for d, sid in best], truncated)


def linear_scan(prefixes: Sequence[Sequence[int]], query: Sequence[int], k: int) -> list[Neighbor]:
    """Brute-force reference for :func:`knn_retrieve`."""
    scored = sorted((normalized_distance(query, p, levenshtein), i) for i, p in enumerate(prefixes))
    return [Neighbor(i, d) for d, i in scored[:k]]


def knn_predict_suffix(suffixes: Sequence[Sequence[int]], k: int | None = None) -> list[int]:
    """Combine neighbor suffixes, nearest first.

    One neighbor gives its suffix verbatim. Several give the medoid: the
    suffix with the smallest summed normalized edit distance to the others,
    ties resolved toward the nearer prefix.
    """
    cands = list(suffixes)[: k or len(suffixes)]
    if not cands:
        raise ValueError("no neighbors to combine")
    if len(cands) == 1:
        return list(cands[0])
    costs = [sum(normalized_distance(a, b) for b in cands) for a in cands]
    return list(cands[int(np.argmin(costs))])


@dataclass
class KnnModel:
    index: TrieIndex
    k: int = 1

    def neighbors(self, prefix: Sequence[int]) -> KnnResult:
        return knn_retrieve(self.index, prefix, self.k)

    def predict_suffix(self, prefix: Sequence[int]) -> list[int]:
        res = self.neighbors(prefix)
        return knn_predict_suffix([self.index.suffixes[i] for i in res.ids])

    def predict_next(self, prefix: Sequence[int], end: int) -> int:
        """Most common first symbol of the neighbors' suffixes (nearest wins ties)."""
        res = self.neighbors(prefix)
        firsts = [(self.index.suffixes[i] or [end])[0] for i in res.ids]
        counts = Counter(firsts)
        top = max(counts.values())
        return next(f for f in firsts if counts[f] == top)

    def predict_remaining(self, prefix: Sequence[int]) -> float:
        res = self.neighbors(prefix)
        return float(np.mean([self.index.remaining[i] for i in res.ids]))


# ---------------------------------------------------------------------------
# language-model baselines

LSTM, GRU = "lstm", "gru"


class LMBaseline:
    """Single-layer LSTM or GRU over one-hot symbols with a softmax head."""

    def __init__(self, kind: str, vocab_size: int, hidden: int = 100, seed: int = 0):
        if kind not in (LSTM, GRU):
            raise ValueError(f"unknown cell kind {kind!r}")
        rng = np.random.default_rng(seed)
        self.kind = kind
        self.vocab_size = vocab_size
        self.hidden = hidden
        cell_cls = LSTMParams if kind == LSTM else GRUParams
        self.cell = cell_cls.init(vocab_size, hidden, rng, prefix=f"{kind}.cell")
        self.W_y = Parameter(uniform_init(rng, (hidden, vocab_size)), f"{kind}.W_y")
        self.b_y = Parameter(np.zeros(vocab_size), f"{kind}.b_y")

    def parameters(self) -> list[Parameter]:
        return self.cell.parameters() + [self.W_y, self.b_y]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            v = np.asarray(values[p.name], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"parameter {p.name!r}: shape {v.shape} != {p.shape}")
            p.data = v.copy()

    def initial_state(self, batch: int):
        if self.kind == LSTM:
            return LSTMState.zeros(batch, self.hidden)
        return Tensor(np.zeros((batch, self.hidden)))

    def step(self, state, symbols: np.ndarray):
        x = Tensor(np.eye(self.vocab_size)[symbols])
        if self.kind == LSTM:
            state = lstm_step(state, x, self.cell)
            h = state.h
        else:
            state = h = gru_step(state, x, self.cell)
        return state, h @ self.W_y + self.b_y

    def sequence_loss(self, sequences: Sequence[Sequence[int]]) -> Tensor:
        """Mean over sequences of summed next-symbol cross-entropy (teacher forcing)."""
        B = len(sequences)
        T = max(len(s) for s in sequences) - 1
        inputs = np.zeros((B, T), dtype=np.int64)
        targets = np.zeros((B, T), dtype=np.int64)
        mask = np.zeros((B, T))
        for i, s in enumerate(sequences):
            inputs[i, :len(s) - 1] = s[:-1]
            targets[i, :len(s) - 1] = s[1:]
            mask[i, :len(s) - 1] = 1.0
        state = self.initial_state(B)
        steps = []
        for t in range(T):
            state, logits = self.step(state, inputs[:, t])
            steps.append(reshape(logits, (B, 1, -1)))
        return cross_entropy(concat(steps, axis=1), targets, mask) * (1.0 / B)


def lm_generate_batch(model: LMBaseline, prefixes: Sequence[Sequence[int]], max_len: int) -> list[list[int]]:
    """Greedy continuation of equal-length prefixes until END or ``max_len``."""
    B = len(prefixes)
    P = np.array([list(p) for p in prefixes], dtype=np.int64)
    if P.ndim != 2 or P.shape[1] == 0:
        raise ValueError("prefixes must be non-empty and of equal length")
    end = model.vocab_size - 1
    state = model.initial_state(B)
    for t in range(P.shape[1]):
        state, logits = model.step(state, P[:, t])
    out: list[list[int]] = [[] for _ in range(B)]
    live = np.ones(B, dtype=bool)
    for _ in range(max_len):
        sym = np.argmax(logits.data, axis=-1)
        for b in np.flatnonzero(live):
            if sym[b] == end:
                live[b] = False
            else:
                out[b].append(int(sym[b]))
        if not live.any():
            break
        state, logits = model.step(state, sym)
    return out


def lm_generate(model: LMBaseline, prefix_symbols: Sequence[int], max_len: int) -> list[int]:
    return lm_generate_batch(model, [prefix_symbols], max_len)[0]


def lm_predict(model: LMBaseline, prefixes: Sequence[Sequence[int]], max_len: int,
               batch: int = 256) -> tuple[np.ndarray, list[list[int]]]:
    """Next-symbol distributions and greedy suffixes for prefixes of any lengths."""
    probs = np.zeros((len(prefixes), model.vocab_size))
    suffixes: list = [None] * len(prefixes)
    for idx in bucket_batches([len(p) for p in prefixes], batch):
        group = [prefixes[i] for i in idx]
        P = np.array(group, dtype=np.int64)
        state = model.initial_state(len(idx))
        for t in range(P.shape[1]):
            state, logits = model.step(state, P[:, t])
        probs[idx] = softmax_array(logits.data)
        for i, s in zip(idx, lm_generate_batch(model, group, max_len)):
            suffixes[i] = s
    return probs, suffixes


def sequences_from_samples(samples) -> list[list[int]]:
    """Full traces (END-terminated) recovered from prefix/suffix samples, one per case."""
    seen: dict[str, list[int]] = {}
    for s in samples:
        if s.case_id not in seen:
            seen[s.case_id] = list(s.prefix_symbols) + list(s.target_suffix)
    return list(seen.values())


def train_lm(model: LMBaseline, sequences: Sequence[Sequence[int]], epochs: int = MAX_EPOCHS,
             batch: int = 32, seed: int = 0, val_sequences: Sequence[Sequence[int]] | None = None,
             patience: int = PATIENCE, lr: float = 0.001, target_loss: float | None = None) -> TrainingReport:
    sequences = [list(s) for s in sequences if len(s) >= 2]
    if not sequences:
        raise ValueError("no training sequences of length >= 2")
    keys = [len(s) for s in sequences]

    def make_batches(rng):
        return [[sequences[i] for i in idx] for idx in bucket_batches(keys, batch, rng)]

    val_batches = None
    if val_sequences:
        vs = [list(s) for s in val_sequences if len(s) >= 2]
        val_batches = [[vs[i] for i in idx] for idx in bucket_batches([len(s) for s in vs], 256)]
    return fit(model.parameters(), make_batches, model.sequence_loss, epochs=epochs, seed=seed,
               val_batches=val_batches, patience=patience, lr=lr, target_loss=target_loss)
