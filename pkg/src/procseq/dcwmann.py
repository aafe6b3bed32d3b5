"""Dual-controller memory-augmented network with a write-protected decoder.

The encoder LSTM reads a prefix one event at a time, writing to and reading
from an external memory. Its final state and the memory are handed to a
separate decoder LSTM that generates the suffix while only reading memory.
Next-activity and time-to-event predictions come from the encoder's output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import extmem
from .eventlog import FeatureVector, PrefixSuffixSample, Scaling
from .extmem import InterfaceVector, MemoryConfig, MemoryState
from .numcore import (
    Parameter,
    Tensor,
    absolute,
    concat,
    cross_entropy,
    reshape,
    softmax_array,
    uniform_init,
)
from .recurrent import LSTMParams, LSTMState, lstm_step
from .training import MAX_EPOCHS, PATIENCE, TrainingReport, bucket_batches, fit

NEXT = "next"
SUFFIX = "suffix"


class ConfigurationError(ValueError):
    pass


@dataclass
class DCwMANNConfig:
    input_dim: int
    vocab_size: int
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    controller_hidden: int = 100
    output_dim: int | None = None
    time_head: bool = True
    max_decode_len: int = 50

    def __post_init__(self):
        if isinstance(self.memory, dict):
            self.memory = MemoryConfig(**self.memory)
        if self.output_dim is None:
            self.output_dim = self.controller_hidden
        dims = (self.input_dim, self.vocab_size, self.controller_hidden, self.output_dim, self.max_decode_len)
        if min(dims) < 1:
            raise ConfigurationError(f"dimensions must be positive: {self}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Controller:
    """One LSTM controller with its memory interface and output heads."""

    lstm: LSTMParams
    iface_W: Parameter
    iface_b: Parameter
    out_W: Parameter
    out_b: Parameter
    act_W: Parameter
    time_W: Parameter | None = None
    time_b: Parameter | None = None
    go: Parameter | None = None

    def parameters(self) -> list[Parameter]:
        ps = self.lstm.parameters() + [self.iface_W, self.iface_b, self.out_W, self.out_b, self.act_W]
        return ps + [p for p in (self.time_W, self.time_b, self.go) if p is not None]

    @classmethod
    def init(cls, prefix: str, input_dim: int, iface_size: int, cfg: DCwMANNConfig,
             rng: np.random.Generator, decoder: bool) -> "Controller":
        H, O, V = cfg.controller_hidden, cfg.output_dim, cfg.vocab_size
        RW = cfg.memory.R * cfg.memory.W
        ctl = cls(
            lstm=LSTMParams.init(input_dim + RW, H, rng, prefix=f"{prefix}.lstm"),
            iface_W=Parameter(uniform_init(rng, (H, iface_size)), f"{prefix}.iface_W"),
            iface_b=Parameter(np.zeros(iface_size), f"{prefix}.iface_b"),
            out_W=Parameter(uniform_init(rng, (H + RW, O)), f"{prefix}.out_W"),
            out_b=Parameter(np.zeros(O), f"{prefix}.out_b"),
            act_W=Parameter(uniform_init(rng, (O, V)), f"{prefix}.act_W"),
        )
        if decoder:
            ctl.go = Parameter(uniform_init(rng, (V,)), f"{prefix}.go")
        elif cfg.time_head:
            ctl.time_W = Parameter(uniform_init(rng, (O, 1)), f"{prefix}.time_W")
            ctl.time_b = Parameter(np.zeros(1), f"{prefix}.time_b")
        return ctl

    def output(self, h: Tensor, read_vectors: Tensor) -> Tensor:
        B = h.shape[0]
        return concat([h, reshape(read_vectors, (B, -1))]) @ self.out_W + self.out_b


@dataclass
class EncodeResult:
    state: LSTMState
    memory: MemoryState
    output: Tensor  # (B, output_dim) from the last step

    @property
    def read_vectors(self) -> Tensor:
        return self.memory.read_vectors


class DCwMANN:
    def __init__(self, config: DCwMANNConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        mem = config.memory
        self.enc = Controller.init("enc", config.input_dim, mem.interface_size, config, rng, decoder=False)
        self.dec = Controller.init("dec", config.vocab_size, mem.read_interface_size, config, rng, decoder=True)

    def parameters(self) -> list[Parameter]:
        return self.enc.parameters() + self.dec.parameters()

    def encoder_parameters(self) -> list[Parameter]:
        return self.enc.parameters()

    def decoder_parameters(self) -> list[Parameter]:
        return self.dec.parameters()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in values:
                raise ConfigurationError(f"missing parameter {p.name!r}")
            v = np.asarray(values[p.name], dtype=np.float64)
            if v.shape != p.shape:
                raise ConfigurationError(f"parameter {p.name!r}: shape {v.shape} != {p.shape}")
            p.data = v.copy()


# ---------------------------------------------------------------------------
# encoding and prediction


def _as_batch(prefix) -> np.ndarray:
    if isinstance(prefix, PrefixSuffixSample):
        return prefix.features[None]
    if isinstance(prefix, (list, tuple)) and prefix and isinstance(prefix[0], FeatureVector):
        return np.stack([fv.vector for fv in prefix])[None]
    arr = np.asarray(prefix, dtype=float)
    return arr[None] if arr.ndim == 2 else arr


def _encoder_steps(model: DCwMANN, x: np.ndarray):
    """Yield (state, memory, output) after each prefix step of a (B, T, D) batch."""
    cfg = model.config
    if x.ndim != 3 or x.shape[1] == 0:
        raise ConfigurationError(f"expected a non-empty prefix batch (B, T, D), got shape {x.shape}")
    if x.shape[2] != cfg.input_dim:
        raise ConfigurationError(f"prefix feature width {x.shape[2]} != configured input_dim {cfg.input_dim}")
    B = x.shape[0]
    ctl = model.enc
    state = LSTMState.zeros(B, cfg.controller_hidden)
    mem = MemoryState.initial(B, cfg.memory)
    for t in range(x.shape[1]):
        inp = concat([Tensor(x[:, t, :]), reshape(mem.read_vectors, (B, -1))])
        state = lstm_step(state, inp, ctl.lstm)
        iv = InterfaceVector.parse(state.h @ ctl.iface_W + ctl.iface_b, cfg.memory)
        reads, mem = extmem.step(mem, iv)
        yield state, mem, ctl.output(state.h, reads)


def encode(model: DCwMANN, prefix) -> EncodeResult:
    """Run the encoder over a prefix.

    ``prefix`` is a list of FeatureVector, a (T, D) feature matrix, or a
    (B, T, D) batch of equal-length prefixes.
    """
    for state, mem, out in _encoder_steps(model, _as_batch(prefix)):
        pass
    return EncodeResult(state, mem, out)


def next_logits(model: DCwMANN, enc: EncodeResult) -> Tensor:
    return enc.output @ model.enc.act_W


def time_output(model: DCwMANN, enc: EncodeResult) -> Tensor | None:
    if model.enc.time_W is None:
        return None
    return reshape(enc.output @ model.enc.time_W + model.enc.time_b, (enc.output.shape[0],))


def predict_next(model: DCwMANN, enc: EncodeResult, scaling: Scaling | None = None):
    """Activity distribution and time-to-next-event estimate.

    Returns ``(probs, time)`` for a single prefix or batched arrays for a
    batch. The time is in standardized units unless ``scaling`` is given, in
    which case it is converted to seconds and floored at zero.
    """
    probs = softmax_array(next_logits(model, enc).data)
    t = time_output(model, enc)
    times = None if t is None else t.data.copy()
    if times is not None and scaling is not None:
        times = np.maximum(scaling.to_seconds(times), 0.0)
    if probs.shape[0] == 1:
        return probs[0], (None if times is None else float(times[0]))
    return probs, times


def argmax_activity(probs: np.ndarray) -> int:
    """Most likely activity; np.argmax already breaks ties by lowest index."""
    return int(np.argmax(probs))


# ---------------------------------------------------------------------------
# decoding


def _decoder_init(enc: EncodeResult) -> tuple[LSTMState, MemoryState]:
    # identity hand-over of the encoder controller state
    return LSTMState(enc.state.h, enc.state.c), enc.memory


def _decode_step(model: DCwMANN, state: LSTMState, mem: MemoryState, x: Tensor):
    cfg = model.config
    ctl = model.dec
    B = x.shape[0]
    inp = concat([x, reshape(mem.read_vectors, (B, -1))])
    state = lstm_step(state, inp, ctl.lstm)
    iv = InterfaceVector.parse(state.h @ ctl.iface_W + ctl.iface_b, cfg.memory)
    reads, mem = extmem.write_protected_step(mem, iv)
    logits = ctl.output(state.h, reads) @ ctl.act_W
    return state, mem, logits


def decode_batch(model: DCwMANN, enc: EncodeResult, max_len: int | None = None) -> list[list[int]]:
    """Greedy suffixes for every row of the batch, END excluded."""
    cfg = model.config
    max_len = cfg.max_decode_len if max_len is None else max_len
    if max_len < 1:
        raise ConfigurationError("max_decode_len must be at least 1")
    end = cfg.vocab_size - 1
    state, mem = _decoder_init(enc)
    B = state.h.shape[0]
    x = Tensor(np.broadcast_to(model.dec.go.data, (B, cfg.vocab_size)).copy())
    out: list[list[int]] = [[] for _ in range(B)]
    live = np.ones(B, dtype=bool)
    eye = np.eye(cfg.vocab_size)
    for _ in range(max_len):
        state, mem, logits = _decode_step(model, state, mem, x)
        sym = np.argmax(logits.data, axis=-1)
        for b in np.flatnonzero(live):
            if sym[b] == end:
                live[b] = False
            else:
                out[b].append(int(sym[b]))
        if not live.any():
            break
        x = Tensor(eye[sym])
    return out


def decode_suffix(model: DCwMANN, enc: EncodeResult, greedy: bool = True,
                  max_len: int | None = None) -> list[int]:
    if not greedy:
        raise NotImplementedError("only greedy decoding is supported")
    return decode_batch(model, enc, max_len)[0]


def teacher_forced_logits(model: DCwMANN, enc: EncodeResult, targets: np.ndarray) -> list[Tensor]:
    """Decoder logits when fed GO then the ground-truth symbols ``targets[:, :-1]``."""
    cfg = model.config
    state, mem = _decoder_init(enc)
    B, T = targets.shape
    eye = np.eye(cfg.vocab_size)
    x = reshape(model.dec.go, (1, cfg.vocab_size)) * np.ones((B, 1))
    steps = []
    for t in range(T):
        state, mem, logits = _decode_step(model, state, mem, x)
        steps.append(logits)
        if t + 1 < T:
            x = Tensor(eye[targets[:, t]])
    return steps


# ---------------------------------------------------------------------------
# losses


def _pad_suffixes(samples: Sequence[PrefixSuffixSample]) -> tuple[np.ndarray, np.ndarray]:
    T = max(len(s.target_suffix) for s in samples)
    targets = np.zeros((len(samples), T), dtype=np.int64)
    mask = np.zeros((len(samples), T))
    for i, s in enumerate(samples):
        targets[i, :len(s.target_suffix)] = s.target_suffix
        mask[i, :len(s.target_suffix)] = 1.0
    return targets, mask


def batch_loss(model: DCwMANN, samples: Sequence[PrefixSuffixSample], task: str = NEXT,
               scaling: Scaling | None = None, lam: float = 1.0) -> Tensor:
    """Mean per-sample loss over a batch of equal-length prefixes.

    ``next``: cross-entropy of the next activity plus ``lam`` times the
    absolute error of the standardized time to the next event.
    ``suffix``: summed per-step cross-entropy of the teacher-forced decoder.
    """
    lengths = {len(s.prefix_symbols) for s in samples}
    if len(lengths) != 1:
        raise ConfigurationError(f"batch mixes prefix lengths {sorted(lengths)}")
    B = len(samples)
    enc = encode(model, np.stack([s.features for s in samples]))
    if task == NEXT:
        targets = np.array([s.target_suffix[0] for s in samples])
        loss = cross_entropy(next_logits(model, enc), targets)
        t = time_output(model, enc)
        if t is not None and lam != 0.0:
            actual = (scaling or Scaling()).standardize([s.target_next_time for s in samples])
            loss = loss + lam * absolute(t - actual).sum()
    elif task == SUFFIX:
        targets, mask = _pad_suffixes(samples)
        steps = teacher_forced_logits(model, enc, targets)
        logits = concat([reshape(s, (B, 1, -1)) for s in steps], axis=1)
        loss = cross_entropy(logits, targets, mask)
    else:
        raise ConfigurationError(f"unknown task {task!r}")
    return loss * (1.0 / B)


def loss(model: DCwMANN, sample: PrefixSuffixSample, task: str = NEXT,
         scaling: Scaling | None = None, lam: float = 1.0) -> Tensor:
    return batch_loss(model, [sample], task, scaling, lam)


@dataclass
class CaseGroup:
    """All samples cut from one trace; ``features`` is its longest prefix."""

    features: np.ndarray
    samples: list[PrefixSuffixSample]

    def __len__(self) -> int:
        return len(self.samples)


def group_by_case(samples: Sequence[PrefixSuffixSample]) -> list[CaseGroup]:
    by_case: dict[str, list[PrefixSuffixSample]] = {}
    for s in samples:
        by_case.setdefault(s.case_id, []).append(s)
    groups: list[CaseGroup] = []
    for members in by_case.values():
        # samples whose features are not a prefix of the group's get their own group
        mine: list[CaseGroup] = []
        for s in sorted(members, key=lambda s: -len(s.prefix_symbols)):
            p = len(s.prefix_symbols)
            home = next((g for g in mine if np.array_equal(g.features[:p], s.features)), None)
            if home is None:
                home = CaseGroup(s.features, [])
                mine.append(home)
            home.samples.append(s)
        groups += mine
    return groups


def grouped_loss(model: DCwMANN, groups: Sequence[CaseGroup], task: str = NEXT,
                 scaling: Scaling | None = None, lam: float = 1.0) -> Tensor:
    """Mean per-sample loss, running the encoder once per trace.

    Every sample of a group reads the encoder output at its own prefix
    length, so the value equals the mean of :func:`loss` over the samples.
    Groups in one call must share the longest-prefix length.
    """
    T = groups[0].features.shape[0]
    if any(g.features.shape[0] != T for g in groups):
        raise ConfigurationError("case groups in one batch must share their longest prefix length")
    at_step: dict[int, tuple[list[int], list[PrefixSuffixSample]]] = {}
    for row, g in enumerate(groups):
        for s in g.samples:
            rows, ss = at_step.setdefault(len(s.prefix_symbols) - 1, ([], []))
            rows.append(row)
            ss.append(s)
    picked_out, picked_h, picked_c, picked_mem, ordered = [], [], [], [], []
    for t, (state, mem, out) in enumerate(_encoder_steps(model, np.stack([g.features for g in groups]))):
        if t not in at_step:
            continue
        rows, ss = at_step[t]
        idx = np.array(rows)
        picked_out.append(out[idx])
        ordered += ss
        if task == SUFFIX:
            picked_h.append(state.h[idx])
            picked_c.append(state.c[idx])
            picked_mem.append(mem.select(idx))
    n = len(ordered)
    if task == NEXT:
        out = concat(picked_out, axis=0)
        enc = EncodeResult(None, None, out)
        loss_ = cross_entropy(next_logits(model, enc), np.array([s.target_suffix[0] for s in ordered]))
        t_out = time_output(model, enc)
        if t_out is not None and lam != 0.0:
            actual = (scaling or Scaling()).standardize([s.target_next_time for s in ordered])
            loss_ = loss_ + lam * absolute(t_out - actual).sum()
    elif task == SUFFIX:
        mem = MemoryState(*(concat([getattr(m, f) for m in picked_mem], axis=0) for f in extmem._FIELDS))
        enc = EncodeResult(LSTMState(concat(picked_h, axis=0), concat(picked_c, axis=0)), mem,
                           concat(picked_out, axis=0))
        targets, mask = _pad_suffixes(ordered)
        steps = teacher_forced_logits(model, enc, targets)
        logits = concat([reshape(s, (n, 1, -1)) for s in steps], axis=1)
        loss_ = cross_entropy(logits, targets, mask)
    else:
        raise ConfigurationError(f"unknown task {task!r}")
    return loss_ * (1.0 / n)


# ---------------------------------------------------------------------------
# training and batch inference


def train(
    model: DCwMANN,
    samples: Sequence[PrefixSuffixSample],
    task: str = NEXT,
    epochs: int = MAX_EPOCHS,
    batch: int = 16,
    seed: int = 0,
    scaling: Scaling | None = None,
    val_samples: Sequence[PrefixSuffixSample] | None = None,
    patience: int = PATIENCE,
    lam: float = 1.0,
    lr: float = 0.001,
    target_loss: float | None = None,
) -> TrainingReport:
    if not samples:
        raise ConfigurationError("no training samples")
    groups = group_by_case(samples)
    keys = [g.features.shape[0] for g in groups]

    def make_batches(rng):
        return [[groups[i] for i in idx] for idx in bucket_batches(keys, batch, rng)]

    def loss_fn(b):
        return grouped_loss(model, b, task, scaling, lam)

    val_batches = None
    val_metric = None
    if val_samples:
        val_samples = list(val_samples)
        val_groups = group_by_case(val_samples)
        val_batches = [[val_groups[i] for i in idx]
                       for idx in bucket_batches([g.features.shape[0] for g in val_groups], 64)]
        if task == NEXT:
            val_metric = lambda: next_accuracy(model, val_samples)  # noqa: E731
    return fit(model.parameters(), make_batches, loss_fn, epochs=epochs, seed=seed,
               val_batches=val_batches, val_metric=val_metric, patience=patience, lr=lr,
               target_loss=target_loss, weight_fn=_sample_count)


def _sample_count(groups: Sequence[CaseGroup]) -> int:
    return sum(len(g) for g in groups)


def predict_batches(model: DCwMANN, samples: Sequence[PrefixSuffixSample], scaling: Scaling | None = None,
                    batch: int = 256, suffix: bool = False, max_len: int | None = None):
    """Batched inference in input order.

    Returns (next-activity probabilities, time estimates in seconds or None,
    decoded suffixes or None).
    """
    samples = list(samples)
    probs = np.zeros((len(samples), model.config.vocab_size))
    times = np.zeros(len(samples)) if model.enc.time_W is not None else None
    suffixes: list | None = [None] * len(samples) if suffix else None
    for idx in bucket_batches([len(s.prefix_symbols) for s in samples], batch):
        enc = encode(model, np.stack([samples[i].features for i in idx]))
        p = softmax_array(next_logits(model, enc).data)
        probs[idx] = p
        if times is not None:
            t = time_output(model, enc).data
            times[idx] = np.maximum(scaling.to_seconds(t), 0.0) if scaling else t
        if suffixes is not None:
            for i, s in zip(idx, decode_batch(model, enc, max_len)):
                suffixes[i] = s
    return probs, times, suffixes


def next_accuracy(model: DCwMANN, samples: Sequence[PrefixSuffixSample]) -> float:
    probs, _, _ = predict_batches(model, samples)
    return float(np.mean(np.argmax(probs, axis=-1) == np.array([s.target_suffix[0] for s in samples])))


def count_parameters(model: DCwMANN) -> int:
    return int(sum(p.data.size for p in model.parameters()))
