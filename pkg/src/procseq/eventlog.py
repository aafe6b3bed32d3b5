"""Event log ingestion, labeling, splitting, prefix/suffix sampling and feature encoding."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

END = "<END>"
SECONDS_PER_DAY = 86_400
N_TIME_FEATURES = 4

POSITIVE = "positive"
NEGATIVE = "negative"
UNLABELED = "unlabeled"


class SchemaError(ValueError):
    pass


class RowError(ValueError):
    pass


class VocabularyError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ParameterError(ValueError):
    pass


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    case_id: str
    activity: int
    timestamp: int
    resource: int | None = None


@dataclass
class Trace:
    case_id: str
    events: list[Event]
    label: str = UNLABELED

    def __post_init__(self):
        if not self.events:
            raise ValueError(f"trace {self.case_id!r} has no events")

    def __len__(self) -> int:
        return len(self.events)

    @property
    def symbols(self) -> list[int]:
        return [e.activity for e in self.events]

    @property
    def duration(self) -> int:
        return self.events[-1].timestamp - self.events[0].timestamp


class Vocabulary:
    """Dense activity-name <-> index map with ``<END>`` as the last index."""

    def __init__(self, names: Iterable[str]):
        names = list(names)
        if END in names:
            raise VocabularyError(f"activity name {END!r} is reserved")
        if len(set(names)) != len(names):
            raise VocabularyError("duplicate activity names")
        self.names: list[str] = names + [END]
        self._index = {n: i for i, n in enumerate(self.names)}

    @classmethod
    def build(cls, names: Iterable[str]) -> "Vocabulary":
        return cls(sorted(set(names)))

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def end(self) -> int:
        return len(self.names) - 1

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.names == other.names

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise VocabularyError(f"unknown activity {name!r}") from None

    def name(self, index: int) -> str:
        if not 0 <= index < self.size:
            raise VocabularyError(f"activity index {index} outside vocabulary of size {self.size}")
        return self.names[index]

    def to_list(self) -> list[str]:
        return self.names[:-1]


@dataclass
class EventLog:
    traces: list[Trace]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def n_events(self) -> int:
        return sum(len(t) for t in self.traces)


# ---------------------------------------------------------------------------
# CSV parsing


@dataclass(frozen=True)
class CsvSchema:
    case: str = "case_id"
    activity: str = "activity"
    timestamp: str = "timestamp"
    resource: str | None = None
    timestamp_format: str | None = None


def parse_timestamp(raw: str, fmt: str | None = None) -> int:
    """Integer epoch seconds, or an ISO-8601 / strptime string (naive means UTC)."""
    raw = raw.strip()
    if fmt is None and raw.lstrip("-").isdigit():
        return int(raw)
    dt = datetime.strptime(raw, fmt) if fmt else datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_csv_log(path: str | Path, schema: CsvSchema = CsvSchema(),
                  vocab: Vocabulary | None = None) -> EventLog:
    """Group CSV rows into traces sorted by timestamp (stable on ties).

    Activities are indexed with ``vocab`` when given, else a vocabulary of the
    sorted distinct names is built.
    """
    rows: dict[str, list[tuple[int, int, str, str | None]]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        wanted = [schema.case, schema.activity, schema.timestamp]
        if schema.resource:
            wanted.append(schema.resource)
        for col in wanted:
            if col not in header:
                raise SchemaError(f"missing column {col!r} in {path}")
        for order, row in enumerate(reader):
            line = reader.line_num
            try:
                ts = parse_timestamp(row[schema.timestamp], schema.timestamp_format)
            except (ValueError, TypeError, AttributeError) as exc:
                raise RowError(f"{path}:{line}: unparsable timestamp {row[schema.timestamp]!r}") from exc
            res = row[schema.resource] if schema.resource else None
            rows[row[schema.case]].append((ts, order, row[schema.activity], res))
    if vocab is None:
        vocab = Vocabulary.build(act for evs in rows.values() for _, _, act, _ in evs)
    resources = sorted({r for evs in rows.values() for *_, r in evs if r is not None})
    res_index = {r: i for i, r in enumerate(resources)}
    traces = []
    for case_id, evs in rows.items():
        evs.sort(key=lambda e: (e[0], e[1]))
        events = [Event(case_id, vocab.index(act), ts, res_index.get(res)) for ts, _, act, res in evs]
        traces.append(Trace(case_id, events))
    return EventLog(traces, vocab)


def write_csv_log(path: str | Path, log_: EventLog, schema: CsvSchema = CsvSchema()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.case, schema.activity, schema.timestamp])
        for t in log_.traces:
            for e in t.events:
                w.writerow([t.case_id, log_.vocab.name(e.activity), e.timestamp])


def filter_by_start(traces: Sequence[Trace], start_before: int | None = None,
                    start_after: int | None = None) -> list[Trace]:
    """Keep traces whose first timestamp lies in [start_after, start_before)."""
    out = []
    for t in traces:
        first = t.events[0].timestamp
        if start_before is not None and first >= start_before:
            continue
        if start_after is not None and first < start_after:
            continue
        out.append(t)
    return out


# ---------------------------------------------------------------------------
# labeling and splitting


@dataclass(frozen=True)
class MaxStateChanges:
    """Negative when a trace has more than ``n`` events.

    With ``count_transitions`` the count is events minus one instead.
    """

    n: int
    count_transitions: bool = False


@dataclass(frozen=True)
class MaxDuration:
    """Positive when last-minus-first timestamp is at most ``seconds``."""

    seconds: int


@dataclass(frozen=True)
class NoLabel:
    pass


def label_traces(traces: Sequence[Trace], rule) -> list[Trace]:
    if isinstance(rule, MaxStateChanges):
        if rule.n <= 0:
            raise ParameterError("max_state_changes needs a positive count")
        changes = (lambda t: len(t) - 1) if rule.count_transitions else len
        decide = lambda t: NEGATIVE if changes(t) > rule.n else POSITIVE  # noqa: E731
    elif isinstance(rule, MaxDuration):
        if rule.seconds <= 0:
            raise ParameterError("max_duration needs a positive number of seconds")
        decide = lambda t: POSITIVE if t.duration <= rule.seconds else NEGATIVE  # noqa: E731
    elif isinstance(rule, NoLabel) or rule is None:
        decide = lambda t: UNLABELED  # noqa: E731
    else:
        raise ParameterError(f"unknown labeling rule {rule!r}")
    return [Trace(t.case_id, t.events, decide(t)) for t in traces]


def parse_rule(text: str | None):
    """``max_state_changes:25``, ``max_duration:154800`` or ``none``."""
    if not text or text == "none":
        return NoLabel()
    kind, _, arg = text.partition(":")
    if kind == "max_state_changes":
        return MaxStateChanges(int(arg))
    if kind == "max_duration":
        return MaxDuration(int(arg))
    raise ParameterError(f"unknown labeling rule {text!r}")


def split_train_test(traces: Sequence[Trace], ratio: float = 0.8, seed: int = 0):
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"split ratio must lie in (0, 1), got {ratio}")
    if len(traces) < 2:
        raise ParameterError("need at least two traces to split")
    perm = np.random.default_rng(seed).permutation(len(traces))
    cut = math.floor(ratio * len(traces))
    return [traces[i] for i in perm[:cut]], [traces[i] for i in perm[cut:]]


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class Scaling:
    """Divisors for the time features plus the standardisation of time targets."""

    case_duration: float = 1.0
    time_mean: float = 0.0
    time_std: float = 1.0

    @classmethod
    def fit(cls, traces: Sequence[Trace], min_prefix: int = 1) -> "Scaling":
        durations = [t.duration for t in traces]
        mean_dur = float(np.mean(durations)) if durations else 1.0
        gaps = [t.events[p].timestamp - t.events[p - 1].timestamp
                for t in traces for p in range(max(min_prefix, 1), len(t))]
        mean = float(np.mean(gaps)) if gaps else 0.0
        std = float(np.std(gaps)) if gaps else 1.0
        return cls(case_duration=max(mean_dur, 1.0), time_mean=mean, time_std=std if std > 0 else 1.0)

    def standardize(self, seconds):
        return (np.asarray(seconds, dtype=float) - self.time_mean) / self.time_std

    def to_seconds(self, standardized):
        return np.asarray(standardized, dtype=float) * self.time_std + self.time_mean


@dataclass
class FeatureVector:
    onehot: np.ndarray
    time_feats: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.onehot, self.time_feats])

    @property
    def activity(self) -> int:
        return int(np.argmax(self.onehot))


def time_features(ts: int, prev_ts: int, start_ts: int, scaling: Scaling) -> np.ndarray:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    return np.array([
        (ts - prev_ts) / scaling.case_duration,
        (ts - start_ts) / scaling.case_duration,
        (ts % SECONDS_PER_DAY) / SECONDS_PER_DAY,
        dt.weekday() / 7.0,
    ])


def encode(event: Event, vocab: Vocabulary, scaling: Scaling | None,
           previous: Event | None = None, case_start: Event | None = None) -> FeatureVector:
    """One-hot activity block plus four scaled time features.

    ``scaling=None`` gives the raw encoding with zeroed time features. The
    first event of a case has zero elapsed-time features.
    """
    if not 0 <= event.activity < vocab.size:
        raise VocabularyError(f"unknown activity {event.activity!r}")
    onehot = np.zeros(vocab.size)
    onehot[event.activity] = 1.0
    if scaling is None:
        return FeatureVector(onehot, np.zeros(N_TIME_FEATURES))
    prev_ts = (previous or event).timestamp
    start_ts = (case_start or previous or event).timestamp
    return FeatureVector(onehot, time_features(event.timestamp, prev_ts, start_ts, scaling))


def encode_end(vocab: Vocabulary) -> FeatureVector:
    onehot = np.zeros(vocab.size)
    onehot[vocab.end] = 1.0
    return FeatureVector(onehot, np.zeros(N_TIME_FEATURES))


def decode(fv: FeatureVector) -> int:
    return fv.activity


def encode_trace(events: Sequence[Event], vocab: Vocabulary, scaling: Scaling | None) -> np.ndarray:
    """Feature matrix of shape (len(events), vocab.size + 4)."""
    rows = [
        encode(e, vocab, scaling, events[i - 1] if i else None, events[0]).vector
        for i, e in enumerate(events)
    ]
    return np.stack(rows)


def feature_dim(vocab: Vocabulary) -> int:
    return vocab.size + N_TIME_FEATURES


# ---------------------------------------------------------------------------
# samples


@dataclass
class PrefixSuffixSample:
    case_id: str
    prefix_symbols: list[int]
    target_suffix: list[int]
    target_next_time: float
    target_remaining_time: float
    features: np.ndarray  # (len(prefix_symbols), feature_dim)

    @property
    def prefix(self) -> list[FeatureVector]:
        V = self.features.shape[1] - N_TIME_FEATURES
        return [FeatureVector(r[:V].copy(), r[V:].copy()) for r in self.features]

    @property
    def next_activity(self) -> int:
        return self.target_suffix[0]

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "prefix_symbols": self.prefix_symbols,
            "suffix_symbols": self.target_suffix,
            "next_time": self.target_next_time,
            "remaining_time": self.target_remaining_time,
            "features": [[float(v) for v in row] for row in self.features],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PrefixSuffixSample":
        return cls(
            case_id=rec.get("case_id", ""),
            prefix_symbols=list(rec["prefix_symbols"]),
            target_suffix=list(rec["suffix_symbols"]),
            target_next_time=float(rec["next_time"]),
            target_remaining_time=float(rec["remaining_time"]),
            features=np.asarray(rec["features"], dtype=float),
        )


class SampleList(list):
    """A list of samples that also carries the generation summary."""

    summary: dict

    def __init__(self, items=(), summary: dict | None = None):
        super().__init__(items)
        self.summary = summary or {}


def make_samples(traces: Sequence[Trace], vocab: Vocabulary, scaling: Scaling | None,
                 min_prefix: int = 4, filter: str = "all") -> SampleList:
    """Cut every trace of length L into prefixes of length min_prefix..L-1.

    ``filter="positive_only"`` drops traces labeled negative.
    """
    if min_prefix < 1:
        raise ParameterError("min_prefix must be at least 1")
    if filter not in ("all", "positive_only"):
        raise ParameterError(f"unknown sample filter {filter!r}")
    samples = SampleList()
    dropped = short = 0
    for t in traces:
        if filter == "positive_only" and t.label == NEGATIVE:
            dropped += 1
            continue
        L = len(t)
        if L < min_prefix + 1:
            short += 1
            continue
        feats = encode_trace(t.events, vocab, scaling)
        symbols = t.symbols
        last = t.events[-1].timestamp
        for p in range(min_prefix, L):
            samples.append(PrefixSuffixSample(
                case_id=t.case_id,
                prefix_symbols=symbols[:p],
                target_suffix=symbols[p:] + [vocab.end],
                target_next_time=float(t.events[p].timestamp - t.events[p - 1].timestamp),
                target_remaining_time=float(last - t.events[p - 1].timestamp),
                features=feats[:p],
            ))
    samples.summary = {"traces": len(traces), "dropped_negative": dropped,
                       "too_short": short, "samples": len(samples)}
    if short:
        log.info("%d traces shorter than %d events produced no samples", short, min_prefix + 1)
    return samples


def write_samples(path: str | Path, samples: Iterable[PrefixSuffixSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(), sort_keys=True))
            fh.write("\n")


def read_samples(path: str | Path) -> list[PrefixSuffixSample]:
    with open(path, encoding="utf-8") as fh:
        return [PrefixSuffixSample.from_record(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# synthetic grammar logs


@dataclass
class GrammarState:
    emit: dict[str, float]
    next: dict[str, float]


@dataclass(frozen=True)
class LongRangeRule:
    """``trigger_activity`` at ``trigger_step`` forces ``forced_activity`` at ``target_step``.

    Steps are 1-based positions within a trace.
    """

    trigger_step: int
    trigger_activity: str
    target_step: int
    forced_activity: str


@dataclass
class GrammarSpec:
    activities: list[str]
    start: str
    states: dict[str, GrammarState]
    rules: list[LongRangeRule] = field(default_factory=list)
    delay_mean: float = 3600.0
    delay: str = "exponential"  # or "constant"
    start_time: int = 1_577_836_800  # 2020-01-01T00:00:00Z

    def validate(self) -> None:
        acts = set(self.activities)
        if self.start not in self.states:
            raise GrammarError(f"start state {self.start!r} is not defined")
        for name, st in self.states.items():
            for dist, what in ((st.emit, "emission"), (st.next, "transition")):
                if not dist or abs(sum(dist.values()) - 1.0) > 1e-9:
                    raise GrammarError(f"state {name!r}: {what} probabilities must sum to 1")
                if any(p < 0 for p in dist.values()):
                    raise GrammarError(f"state {name!r}: negative {what} probability")
            for a in st.emit:
                if a not in acts:
                    raise GrammarError(f"state {name!r} emits unknown activity {a!r}")
            for n in st.next:
                if n != END and n not in self.states:
                    raise GrammarError(f"state {name!r} moves to unknown state {n!r}")
        for r in self.rules:
            if r.trigger_activity not in acts or r.forced_activity not in acts:
                raise GrammarError(f"rule {r} names an unknown activity")
            if r.target_step <= r.trigger_step:
                raise GrammarError(f"rule {r} must force a later step")
        # END must be reachable from every state reachable from start
        reach, todo = set(), [self.start]
        while todo:
            s = todo.pop()
            if s in reach:
                continue
            reach.add(s)
            todo.extend(n for n, p in self.states[s].next.items() if p > 0 and n != END)
        finishing = {s for s in self.states if self.states[s].next.get(END, 0) > 0}
        changed = True
        while changed:
            changed = False
            for s, st in self.states.items():
                if s not in finishing and any(p > 0 and n in finishing for n, p in st.next.items()):
                    finishing.add(s)
                    changed = True
        stuck = sorted(reach - finishing)
        if stuck:
            raise GrammarError(f"terminal state unreachable from states {stuck}")

    @classmethod
    def chain(cls, activities: Sequence[str], **kw) -> "GrammarSpec":
        """Deterministic grammar emitting ``activities`` in order."""
        names = [f"s{i}" for i in range(len(activities))]
        states = {
            n: GrammarState({a: 1.0}, {names[i + 1] if i + 1 < len(names) else END: 1.0})
            for i, (n, a) in enumerate(zip(names, activities))
        }
        return cls(sorted(set(activities)), names[0], states, **kw)

    def to_dict(self) -> dict:
        return {
            "activities": self.activities,
            "start": self.start,
            "states": {k: {"emit": v.emit, "next": v.next} for k, v in self.states.items()},
            "rules": [vars(r) for r in self.rules],
            "delay_mean": self.delay_mean,
            "delay": self.delay,
            "start_time": self.start_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GrammarSpec":
        return cls(
            activities=list(d["activities"]),
            start=d["start"],
            states={k: GrammarState(dict(v["emit"]), dict(v["next"])) for k, v in d["states"].items()},
            rules=[LongRangeRule(**r) for r in d.get("rules", [])],
            delay_mean=float(d.get("delay_mean", 3600.0)),
            delay=d.get("delay", "exponential"),
            start_time=int(d.get("start_time", 1_577_836_800)),
        )


def long_range_grammar(gap: int = 11) -> GrammarSpec:
    """Ten-activity grammar with a copy block and one long-range choice.

    Steps 1, 3, 4 draw uniformly from A..H and step 2 chooses X or Y. Steps
    5-7 repeat steps 1, 3, 4; a fixed A..E run follows, padded with F when
    ``gap`` is larger than 11, and step ``2 + gap`` repeats the step-2
    choice before the trace ends.
    """
    fillers = list("ABCDEFGH")
    uniform = {a: 1 / len(fillers) for a in fillers}
    pick = {"X": 0.5, "Y": 0.5}
    run = list("ABCDE") + ["F"] * max(0, gap - 11)
    layout = [uniform, pick, uniform, uniform, uniform, uniform, uniform]
    layout += [{a: 1.0} for a in run] + [pick]
    if len(layout) != gap + 2:
        raise GrammarError(f"gap {gap} is too short for this grammar")
    names = [f"p{i + 1}" for i in range(len(layout))]
    states = {
        n: GrammarState(emit, {names[i + 1] if i + 1 < len(names) else END: 1.0})
        for i, (n, emit) in enumerate(zip(names, layout))
    }
    rules = []
    for src, dst in ((1, 5), (3, 6), (4, 7)):
        rules += [LongRangeRule(src, a, dst, a) for a in fillers]
    rules += [LongRangeRule(2, c, 2 + gap, c) for c in pick]
    return GrammarSpec(fillers + ["X", "Y"], names[0], states, rules)


def _draw(rng: np.random.Generator, dist: dict[str, float]) -> str:
    keys = list(dist)
    return keys[int(rng.choice(len(keys), p=np.array([dist[k] for k in keys])))]


def synth_grammar_log(spec: GrammarSpec, n_traces: int, seed: int = 0,
                      max_len: int = 1000, max_attempts: int = 1000) -> EventLog:
    """Sample traces from ``spec``; rules override emissions at their target steps.

    A walk that ends before a pending rule's target step is discarded and
    redrawn.
    """
    spec.validate()
    vocab = Vocabulary.build(spec.activities)
    rng = np.random.default_rng(seed)
    traces = []
    clock = spec.start_time
    for i in range(n_traces):
        for _ in range(max_attempts):
            acts = _walk(spec, rng, max_len)
            if acts is not None:
                break
        else:
            raise GrammarError("could not sample a trace satisfying every rule")
        case_id = f"case_{i:06d}"
        clock += int(rng.integers(0, SECONDS_PER_DAY))
        ts = clock
        events = []
        for a in acts:
            events.append(Event(case_id, vocab.index(a), ts))
            ts += _delay(spec, rng)
        traces.append(Trace(case_id, events))
    return EventLog(traces, vocab)


def _delay(spec: GrammarSpec, rng: np.random.Generator) -> int:
    if spec.delay == "constant":
        return max(1, int(round(spec.delay_mean)))
    return max(1, int(round(rng.exponential(spec.delay_mean))))


def _walk(spec: GrammarSpec, rng: np.random.Generator, max_len: int) -> list[str] | None:
    forced: dict[int, str] = {}
    acts: list[str] = []
    state = spec.start
    while state != END:
        step = len(acts) + 1
        if step > max_len:
            return None
        a = forced.get(step) or _draw(rng, spec.states[state].emit)
        acts.append(a)
        for r in spec.rules:
            if r.trigger_step == step and r.trigger_activity == a:
                if forced.get(r.target_step, r.forced_activity) != r.forced_activity:
                    raise GrammarError(f"rules force conflicting activities at step {r.target_step}")
                forced[r.target_step] = r.forced_activity
        state = _draw(rng, spec.states[state].next)
    if any(s > len(acts) for s in forced):
        return None
    return acts
