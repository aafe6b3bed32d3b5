"""Mini-batch Adam loop with clipping, early stopping and best-weight restore."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numcore import Adam, Parameter, Tensor, TrainingError, backward, clip_grad_norm

log = logging.getLogger(__name__)

PATIENCE = 10
MAX_EPOCHS = 300
CLIP_NORM = 10.0


@dataclass
class TrainingReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False
    seconds: float = 0.0

    @property
    def losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    def to_dict(self) -> dict:
        return asdict(self)


def fit(
    params: Sequence[Parameter],
    make_batches: Callable[[np.random.Generator], list],
    loss_fn: Callable[[object], Tensor],
    epochs: int = MAX_EPOCHS,
    seed: int = 0,
    val_batches: list | None = None,
    val_metric: Callable[[], float] | None = None,
    patience: int = PATIENCE,
    lr: float = 0.001,
    clip: float = CLIP_NORM,
    target_loss: float | None = None,
    weight_fn: Callable[[object], int] = len,
) -> TrainingReport:
    """Train ``params`` in place.

    ``make_batches(rng)`` returns the epoch's batches; ``loss_fn(batch)``
    returns the mean loss of one batch. With ``val_batches`` the held-out
    loss drives early stopping and the best weights are restored at the end.
    Training also stops once the epoch loss falls below ``target_loss``.
    ``weight_fn(batch)`` gives the sample count used to average batch losses.
    """
    rng = np.random.default_rng(seed)
    opt = Adam(list(params), lr=lr)
    report = TrainingReport()
    best = np.inf
    best_values = None
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(1, epochs + 1):
        batches = make_batches(rng)
        total, count = 0.0, 0
        for b, batch in enumerate(batches):
            loss = loss_fn(batch)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            backward(loss)
            clip_grad_norm(opt.params, clip)
            opt.step()
            n = weight_fn(batch)
            total += value * n
            count += n
        row = {"epoch": epoch, "train_loss": total / max(count, 1)}
        if val_batches:
            row["val_loss"] = evaluate_loss(val_batches, loss_fn, weight_fn)
            if val_metric is not None:
                row["val_metric"] = val_metric()
        report.epochs.append(row)
        log.info("epoch %d %s", epoch, {k: round(v, 5) for k, v in row.items() if k != "epoch"})
        if val_batches:
            if row["val_loss"] < best:
                best, stale = row["val_loss"], 0
                report.best_epoch = epoch
                best_values = [p.data.copy() for p in opt.params]
            else:
                stale += 1
                if stale >= patience:
                    report.stopped_early = True
                    break
        if target_loss is not None and row["train_loss"] < target_loss:
            break
    if best_values is not None:
        for p, v in zip(opt.params, best_values):
            p.data = v
    report.seconds = time.perf_counter() - t0
    return report


def evaluate_loss(batches: list, loss_fn: Callable[[object], Tensor],
                  weight_fn: Callable[[object], int] = len) -> float:
    total, count = 0.0, 0
    for batch in batches:
        n = weight_fn(batch)
        total += loss_fn(batch).item() * n
        count += n
    return total / max(count, 1)


def bucket_batches(keys: Sequence, batch_size: int, rng: np.random.Generator | None = None) -> list[list[int]]:
    """Index batches whose members share a key (e.g. prefix length).

    Members are shuffled within each key and the batch order is shuffled when
    ``rng`` is given; otherwise the order is deterministic by key then index.
    """
    groups: dict = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    batches = []
    for k in sorted(groups):
        idx = np.array(groups[k])
        if rng is not None:
            idx = rng.permutation(idx)
        batches += [idx[i:i + batch_size].tolist() for i in range(0, len(idx), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches
