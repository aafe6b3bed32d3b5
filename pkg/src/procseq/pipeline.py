"""End-to-end steps shared by the CLI and the acceptance harness."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines as bl
from . import dcwmann as dm
from . import eventlog as ev
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .metrics import EvalReport, edit_similarity

log = logging.getLogger(__name__)

TRAIN_FILE = "train.jsonl"
TEST_FILE = "test.jsonl"
META_FILE = "meta.json"
DEFAULT_DECODE_LEN = 50


class PreprocessError(ValueError):
    pass


class CompatibilityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# preprocessing


@dataclass
class Preprocessed:
    train: list[ev.PrefixSuffixSample]
    test: list[ev.PrefixSuffixSample]
    vocab: ev.Vocabulary
    scaling: ev.Scaling
    summary: dict


def preprocess_log(log_: ev.EventLog, cfg: RunConfig, test_log: ev.EventLog | None = None) -> Preprocessed:
    """Label, split, fit scaling on the training traces and cut samples."""
    d = cfg.data
    if len(log_) == 0:
        raise PreprocessError("event log has no traces")
    rule = ev.parse_rule(d.label_rule)
    traces = ev.label_traces(log_.traces, rule)
    if test_log is None:
        train_tr, test_tr = ev.split_train_test(traces, d.split_ratio, d.split_seed)
    else:
        train_tr, test_tr = traces, ev.label_traces(test_log.traces, rule)
    scaling = ev.Scaling.fit(train_tr, d.min_prefix)
    train = ev.make_samples(train_tr, log_.vocab, scaling, d.min_prefix, d.filter)
    # test prefixes are never filtered by label
    test = ev.make_samples(test_tr, log_.vocab, scaling, d.min_prefix)
    labels = {k: sum(t.label == k for t in traces) for k in (ev.POSITIVE, ev.NEGATIVE, ev.UNLABELED)}
    summary = {
        "traces": len(traces),
        "events": sum(len(t) for t in traces),
        "train_traces": len(train_tr),
        "test_traces": len(test_tr),
        "train_samples": len(train),
        "test_samples": len(test),
        "labels": labels,
        "activities": len(log_.vocab) - 1,
    }
    if not train:
        log.warning("no training samples after filtering (filter=%s, rule=%s)", d.filter, d.label_rule)
    return Preprocessed(list(train), list(test), log_.vocab, scaling, summary)


def write_preprocessed(pre: Preprocessed, out: str | Path, cfg: RunConfig) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ev.write_samples(out / TRAIN_FILE, pre.train)
    ev.write_samples(out / TEST_FILE, pre.test)
    meta = {"vocab": pre.vocab.to_list(), "scaling": asdict(pre.scaling), "summary": pre.summary,
            "config": cfg.to_dict()}
    (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_meta(directory: str | Path) -> tuple[ev.Vocabulary, ev.Scaling]:
    path = Path(directory) / META_FILE
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run preprocess first")
    meta = json.loads(path.read_text(encoding="utf-8"))
    return ev.Vocabulary(meta["vocab"]), ev.Scaling(**meta["scaling"])


# ---------------------------------------------------------------------------
# training


def split_validation(samples: Sequence[ev.PrefixSuffixSample], ratio: float, seed: int):
    """Hold out whole cases so validation prefixes never share a trace with training."""
    if ratio <= 0.0:
        return list(samples), []
    cases = sorted({s.case_id for s in samples})
    n_val = int(np.floor(ratio * len(cases)))
    if n_val == 0 or n_val == len(cases):
        return list(samples), []
    held = set(np.random.default_rng(seed).permutation(cases)[:n_val].tolist())
    return [s for s in samples if s.case_id not in held], [s for s in samples if s.case_id in held]


def longest_trace(samples: Sequence[ev.PrefixSuffixSample]) -> int:
    # target_suffix carries END, so prefix + suffix is one past the trace length
    return max(len(s.prefix_symbols) + len(s.target_suffix) - 1 for s in samples)


def build_model(cfg: RunConfig, vocab: ev.Vocabulary, longest: int = 49):
    kind = cfg.model.kind
    if kind == "mann":
        return dm.DCwMANN(cfg.mann_config(ev.feature_dim(vocab), vocab.size, longest), seed=cfg.seed)
    if kind in ("lstm", "gru"):
        return bl.LMBaseline(kind, vocab.size, cfg.model.hidden, seed=cfg.seed)
    raise ValueError(f"{kind!r} is not a trainable model")


def train_model(cfg: RunConfig, samples: Sequence[ev.PrefixSuffixSample], vocab: ev.Vocabulary,
                scaling: ev.Scaling):
    """Returns (model, TrainingReport or None for k-NN)."""
    if not samples:
        raise PreprocessError("no training samples")
    if cfg.model.kind == "knn":
        return bl.KnnModel(bl.TrieIndex.build(samples), cfg.model.k), None
    t = cfg.train
    train, val = split_validation(samples, cfg.data.val_ratio, cfg.seed)
    model = build_model(cfg, vocab, longest_trace(samples))
    if isinstance(model, dm.DCwMANN):
        report = dm.train(model, train, t.task, epochs=t.epochs, batch=t.batch, seed=cfg.seed,
                          scaling=scaling, val_samples=val, patience=t.patience, lam=t.lam, lr=t.lr)
    else:
        report = bl.train_lm(model, bl.sequences_from_samples(train), epochs=t.epochs, batch=t.batch,
                             seed=cfg.seed, val_sequences=bl.sequences_from_samples(val) or None,
                             patience=t.patience, lr=t.lr)
    return model, report


def write_epochs_csv(epochs: list[dict], path: str | Path) -> None:
    cols = ["epoch", "train_loss", "val_loss", "val_metric"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for e in epochs:
            w.writerow([_fmt(e.get(c, "")) for c in cols])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# ---------------------------------------------------------------------------
# evaluation


def check_compatible(ckpt: Checkpoint, samples: Sequence[ev.PrefixSuffixSample],
                     vocab: ev.Vocabulary | None = None) -> None:
    if vocab is not None and vocab != ckpt.vocab:
        raise CompatibilityError(
            f"vocabulary mismatch: checkpoint has {ckpt.vocab.size} symbols, samples have {vocab.size}")
    width = ev.feature_dim(ckpt.vocab)
    for s in samples:
        if s.features.shape[1] != width:
            raise CompatibilityError(f"sample feature width {s.features.shape[1]} != checkpoint width {width}")
        if max(s.prefix_symbols + s.target_suffix) >= ckpt.vocab.size:
            raise CompatibilityError(f"sample {s.case_id!r} uses symbols outside the checkpoint vocabulary")


def evaluate(ckpt: Checkpoint, samples: Sequence[ev.PrefixSuffixSample], task: str,
             max_len: int | None = None, fingerprint: dict | None = None) -> EvalReport:
    samples = list(samples)
    if not samples:
        raise PreprocessError("no samples to evaluate")
    end = ckpt.vocab.end
    model = ckpt.model
    if max_len is None:
        max_len = model.config.max_decode_len if ckpt.kind == "mann" else ckpt.header.get(
            "extra", {}).get("max_decode_len", DEFAULT_DECODE_LEN)
    prefixes = [s.prefix_symbols for s in samples]
    times = None
    if ckpt.kind == "mann":
        probs, times, suffixes = dm.predict_batches(model, samples, ckpt.scaling, suffix=task == "suffix",
                                                    max_len=max_len)
        predicted = np.argmax(probs, axis=-1).tolist()
    elif ckpt.kind in ("lstm", "gru"):
        probs, suffixes = bl.lm_predict(model, prefixes, max_len)
        predicted = np.argmax(probs, axis=-1).tolist()
    else:
        predicted = [model.predict_next(p, end) for p in prefixes]
        suffixes = [model.predict_suffix(p) for p in prefixes] if task == "suffix" else None
    records = []
    for i, s in enumerate(samples):
        rec = {"case_id": s.case_id, "prefix_length": len(s.prefix_symbols)}
        if task == "next":
            rec.update(predicted=int(predicted[i]), actual=int(s.target_suffix[0]))
            if times is not None:
                rec.update(predicted_time=float(times[i]), actual_time=float(s.target_next_time))
        else:
            rec.update(predicted_suffix=[int(x) for x in suffixes[i]],
                       actual_suffix=[int(x) for x in s.target_suffix[:-1]])
        records.append(rec)
    fp = {"kind": ckpt.kind, "task": task, "samples": len(samples), "max_decode_len": max_len}
    fp.update(fingerprint or {})
    return EvalReport(task, records, fp)


def write_records_csv(report: EvalReport, path: str | Path) -> None:
    recs = report.records
    cols = list(recs[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols + (["similarity"] if report.task == "suffix" else []))
        for r in recs:
            row = [" ".join(map(str, r[c])) if isinstance(r[c], list) else _fmt(r[c]) for c in cols]
            if report.task == "suffix":
                row.append(repr(edit_similarity(r["predicted_suffix"], r["actual_suffix"])))
            w.writerow(row)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# single-prefix prediction


def prefix_from_names(names: Sequence[str], vocab: ev.Vocabulary) -> ev.PrefixSuffixSample:
    """Sample for a bare symbol list; time features are zero."""
    symbols = [vocab.index(n) for n in names]
    if not symbols:
        raise ev.ParameterError("empty prefix")
    events = [ev.Event("query", s, 0) for s in symbols]
    feats = ev.encode_trace(events, vocab, None)
    return ev.PrefixSuffixSample("query", symbols, [], 0.0, 0.0, feats)


def prefix_from_csv(path: str | Path, vocab: ev.Vocabulary, scaling: ev.Scaling,
                    schema: ev.CsvSchema = ev.CsvSchema()) -> ev.PrefixSuffixSample:
    """Sample for a CSV fragment holding the events of one running case."""
    frag = ev.parse_csv_log(path, schema, vocab)
    if len(frag) != 1:
        raise ev.ParameterError(f"{path}: expected one case, found {len(frag)}")
    t = frag.traces[0]
    return ev.PrefixSuffixSample(t.case_id, t.symbols, [], 0.0, 0.0,
                                 ev.encode_trace(t.events, vocab, scaling))


def predict(ckpt: Checkpoint, sample: ev.PrefixSuffixSample, max_len: int | None = None) -> dict:
    vocab = ckpt.vocab
    model = ckpt.model
    out: dict = {"prefix": [vocab.name(i) for i in sample.prefix_symbols]}
    probs = None
    if ckpt.kind == "mann":
        enc = dm.encode(model, sample.features)
        probs, t = dm.predict_next(model, enc, ckpt.scaling)
        if t is not None:
            out["time_to_next_days"] = t / ev.SECONDS_PER_DAY
        suffix = dm.decode_suffix(model, enc, max_len=max_len)
    elif ckpt.kind in ("lstm", "gru"):
        cap = max_len or ckpt.header.get("extra", {}).get("max_decode_len", DEFAULT_DECODE_LEN)
        p, suffixes = bl.lm_predict(model, [sample.prefix_symbols], cap)
        probs, suffix = p[0], suffixes[0]
    else:
        nxt = model.predict_next(sample.prefix_symbols, vocab.end)
        suffix = model.predict_suffix(sample.prefix_symbols)
        out["remaining_days"] = model.predict_remaining(sample.prefix_symbols) / ev.SECONDS_PER_DAY
        out["next"] = vocab.name(nxt)
    if probs is not None:
        out["distribution"] = {vocab.name(i): float(p) for i, p in enumerate(probs)}
        out["next"] = vocab.name(int(np.argmax(probs)))
    out["suffix"] = [vocab.name(i) for i in suffix]
    return out


def save_model(path: str | Path, model, vocab: ev.Vocabulary, scaling: ev.Scaling, cfg: RunConfig,
               max_decode_len: int | None = None) -> None:
    """Checkpoint plus the decode cap used by non-memory models at evaluation."""
    extra = {"seed": cfg.seed, "task": cfg.train.task}
    if max_decode_len is not None:
        extra["max_decode_len"] = max_decode_len
    save_checkpoint(path, model, vocab, scaling, extra=extra)


def checkpoint_name(kind: str) -> str:
    return "knn_index.json" if kind == "knn" else "model.dcwm"

