"""Sequence distances, similarities and report aggregates."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

SECONDS_PER_DAY = 86_400.0
REPORT_SCHEMA_VERSION = 1


class AggregationError(ValueError):
    pass


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Minimum number of insertions, deletions and substitutions turning a into b."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def damerau_levenshtein(a: Sequence, b: Sequence) -> int:
    """Optimal string alignment distance.

    Adjacent transpositions cost 1, but no substring is edited twice, so this
    is not a true metric (the triangle inequality can fail).
    """
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = a[i - 1] != b[j - 1]
            best = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
            if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
                best = min(best, d[i - 2][j - 2] + 1)
            d[i][j] = best
    return d[n][m]


def normalized_distance(a: Sequence, b: Sequence, distance_fn: Callable = levenshtein) -> float:
    longest = max(len(a), len(b))
    return 0.0 if longest == 0 else distance_fn(a, b) / longest


def normalized_similarity(distance_fn: Callable, a: Sequence, b: Sequence) -> float:
    """``1 - d(a, b) / max(|a|, |b|)``; two empty sequences are identical."""
    return 1.0 - normalized_distance(a, b, distance_fn)


def edit_similarity(a: Sequence, b: Sequence) -> float:
    return normalized_similarity(levenshtein, a, b)


def dl_similarity(a: Sequence, b: Sequence) -> float:
    return normalized_similarity(damerau_levenshtein, a, b)


def accuracy(predicted: Sequence[int], actual: Sequence[int]) -> float:
    if len(predicted) == 0:
        raise AggregationError("accuracy over zero records")
    if len(predicted) != len(actual):
        raise AggregationError(f"{len(predicted)} predictions for {len(actual)} targets")
    return sum(p == a for p, a in zip(predicted, actual)) / len(predicted)


def mae_days(predicted_seconds: Sequence[float], actual_seconds: Sequence[float]) -> float:
    """Mean absolute error, converted from seconds to days."""
    if len(predicted_seconds) == 0:
        raise AggregationError("MAE over zero records")
    if len(predicted_seconds) != len(actual_seconds):
        raise AggregationError(f"{len(predicted_seconds)} predictions for {len(actual_seconds)} targets")
    total = sum(abs(p - a) for p, a in zip(predicted_seconds, actual_seconds))
    return total / len(predicted_seconds) / SECONDS_PER_DAY


@dataclass
class EvalReport:
    """Per-sample records plus aggregates recomputed from them.

    Next-activity records carry ``predicted``/``actual`` activity indices and
    ``predicted_time``/``actual_time`` in seconds. Suffix records carry
    ``predicted_suffix``/``actual_suffix`` symbol lists.
    """

    task: str
    records: list[dict]
    fingerprint: dict = field(default_factory=dict)
    aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = self.recompute()

    def recompute(self) -> dict:
        recs = self.records
        if not recs:
            raise AggregationError(f"no records for task {self.task!r}")
        out: dict = {"count": len(recs)}
        if "predicted" in recs[0]:
            out["accuracy"] = accuracy([r["predicted"] for r in recs], [r["actual"] for r in recs])
        if "predicted_time" in recs[0]:
            out["mae_days"] = mae_days([r["predicted_time"] for r in recs], [r["actual_time"] for r in recs])
        if "predicted_suffix" in recs[0]:
            n = len(recs)
            out["edit_similarity"] = sum(
                edit_similarity(r["predicted_suffix"], r["actual_suffix"]) for r in recs) / n
            out["dl_similarity"] = sum(
                dl_similarity(r["predicted_suffix"], r["actual_suffix"]) for r in recs) / n
        return out

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, **asdict(self)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(task=d["task"], records=d["records"], fingerprint=d.get("fingerprint", {}),
                   aggregates=d.get("aggregates", {}))
