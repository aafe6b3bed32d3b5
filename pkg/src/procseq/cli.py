"""Command-line interface.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
Log verbosity comes from the PROCSEQ_LOG environment variable
(DEBUG, INFO, WARNING; default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import eventlog as ev
from . import gradcheck as gc
from . import pipeline as pl
from . import plotting
from .checkpoint import CheckpointError, load_checkpoint
from .config import MODEL_KINDS, TASKS, ConfigError, apply_overrides, load_config
from .metrics import AggregationError, edit_similarity
from .numcore import TrainingError

log = logging.getLogger("procseq")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DATA_ERRORS = (
    ev.SchemaError, ev.RowError, ev.VocabularyError, ev.ParameterError, ev.GrammarError,
    CheckpointError, pl.PreprocessError, pl.CompatibilityError, AggregationError,
    FileNotFoundError, json.JSONDecodeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config(args):
    cfg = load_config(args.config)
    flags = {k: getattr(args, k, None) for k in ("seed", "out", "task", "model", "k", "max_decode_len",
                                                 "epochs", "log")}
    return apply_overrides(cfg, **flags)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    spec = ev.long_range_grammar(gap=args.gap)
    log_ = ev.synth_grammar_log(spec, args.traces, seed=args.seed or 0)
    ev.write_csv_log(out / "synthetic.csv", log_)
    _write_json(out / "grammar.json", spec.to_dict())
    print(f"wrote {len(log_)} traces ({log_.n_events} events) to {out / 'synthetic.csv'}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    if not cfg.data.log:
        raise UsageError("no event log given (use --log or [data] log)")
    log_ = ev.parse_csv_log(cfg.data.log, cfg.data.schema())
    test_log = ev.parse_csv_log(cfg.data.test_log, cfg.data.schema(), log_.vocab) if cfg.data.test_log else None
    pre = pl.preprocess_log(log_, cfg, test_log)
    pl.write_preprocessed(pre, cfg.out, cfg)
    if not pre.train:
        print("WARNING: no training samples were produced; check the labeling rule and filter",
              file=sys.stderr)
    print(json.dumps(pre.summary, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    data = Path(args.data or cfg.out)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab, scaling = pl.read_meta(data)
    samples = ev.read_samples(data / pl.TRAIN_FILE)
    model, report = pl.train_model(cfg, samples, vocab, scaling)
    ckpt_path = out / pl.checkpoint_name(cfg.model.kind)
    pl.save_model(ckpt_path, model, vocab, scaling, cfg,
                  cfg.model.max_decode_len or pl.longest_trace(samples) + 1)
    summary = {"checkpoint": ckpt_path.name, "config": cfg.to_dict(), "seed": cfg.seed,
               "train_samples": len(samples)}
    if report is not None:
        doc = report.to_dict()
        doc.pop("seconds")  # wall time would break byte-identical reruns
        summary["training"] = doc
        pl.write_epochs_csv(report.epochs, out / "epochs.csv")
        plotting.loss_curve(report.epochs, out / "loss_curve.png",
                            title=f"{cfg.model.kind} {cfg.train.task} loss")
        log.info("trained %d epochs in %.1fs", len(report.epochs), report.seconds)
    _write_json(out / "training.json", summary)
    epochs = len(report.epochs) if report else 0
    print(f"saved {ckpt_path} after {epochs} epochs")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    task = args.task or "next"
    ckpt = load_checkpoint(args.checkpoint)
    if args.k is not None and ckpt.kind == "knn":
        ckpt.model.k = args.k
    samples_path = Path(args.samples)
    samples = ev.read_samples(samples_path)
    vocab = pl.read_meta(samples_path.parent)[0] if (samples_path.parent / pl.META_FILE).exists() else None
    pl.check_compatible(ckpt, samples, vocab)
    report = pl.evaluate(ckpt, samples, task, args.max_decode_len,
                         fingerprint={"checkpoint": pl.file_digest(args.checkpoint),
                                      "samples_file": pl.file_digest(samples_path)})
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    stem = f"eval_{ckpt.kind}_{task}"
    (out / f"{stem}.json").write_text(report.to_json(indent=2) + "\n", encoding="utf-8")
    pl.write_records_csv(report, out / f"{stem}.csv")
    if task == "suffix":
        sims = [edit_similarity(r["predicted_suffix"], r["actual_suffix"]) for r in report.records]
        plotting.similarity_histogram(sims, out / f"{stem}_similarity.png")
    else:
        plotting.accuracy_by_prefix([r["prefix_length"] for r in report.records],
                                    [r["predicted"] == r["actual"] for r in report.records],
                                    out / f"{stem}_accuracy.png")
    width = max(len(k) for k in report.aggregates)
    for key, value in report.aggregates.items():
        print(f"{key:<{width}}  {value:.6f}" if isinstance(value, float) else f"{key:<{width}}  {value}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.k is not None and ckpt.kind == "knn":
        ckpt.model.k = args.k
    if args.csv:
        sample = pl.prefix_from_csv(args.csv, ckpt.vocab, ckpt.scaling)
    elif args.prefix:
        sample = pl.prefix_from_names([s.strip() for s in args.prefix.split(",") if s.strip()], ckpt.vocab)
    else:
        raise UsageError("give a prefix with --prefix A,B,C or --csv FILE")
    print(json.dumps(pl.predict(ckpt, sample, args.max_decode_len), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gc.run_suites(args.suite, seed=args.seed or 0)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<11} max rel err {r.max_rel_error:.3e}  {r.seconds:6.2f}s  {status}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="procseq", description="Next-activity and suffix prediction for event logs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override its keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic long-range grammar log")
    p.add_argument("--traces", type=int, default=2000)
    p.add_argument("--gap", type=int, default=11, help="steps between a choice and its forced echo")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="split a CSV log and write sample files")
    p.add_argument("--log", help="event log CSV")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train a model on preprocessed samples")
    p.add_argument("--data", help="preprocess output directory (default: --out)")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--max-decode-len", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a sample file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--k", type=int)
    p.add_argument("--max-decode-len", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="predict the continuation of one prefix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prefix", help="comma-separated activity names")
    p.add_argument("--csv", help="CSV fragment with the events of one running case")
    p.add_argument("--k", type=int)
    p.add_argument("--max-decode-len", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    p.add_argument("--suite", action="append", choices=list(gc.SUITES))
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("PROCSEQ_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"procseq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"procseq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"procseq: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
