"""calibra command line: train, sweep, evaluate."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import checkpoint
from .calibration import evaluate_probs, format_reliability, reliability_diagram
from .experiment import (ConfigError, ExperimentConfig, atomic_write, dump_config, load_config,
                         model_spec, parse_config, prepare_data, run, run_sweep)
from .training import TrainingAborted, predict
from .variational import VariationalPosterior, ensemble_predict

SWEEP_COLUMNS = ("objective", "lambda", "seed", "accuracy", "ece", "status")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("CALIBRA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"CALIBRA_THREADS must be an integer, got {env!r}")
    return 0


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
        cfg.sweep["seeds"] = [args.seed]
    # the effective config must survive an echo round trip
    if parse_config(json.loads(dump_config(cfg))).to_dict() != cfg.to_dict():
        raise ConfigError("effective config does not re-parse to itself")
    return cfg


def _report_json(acc, report, extra=None) -> str:
    bins = report.to_dict()
    body = {"accuracy": acc, "ece": bins.pop("ece"), "n": bins.pop("n"), "n_bins": bins.pop("n_bins"),
            "bin_counts": bins["counts"], "bin_accuracy": bins["accuracy"], "bin_confidence": bins["confidence"]}
    if extra:
        body.update(extra)
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def cmd_train(args) -> int:
    cfg = _load(args)
    spec, state, log, te = run(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    acc, report = evaluate_probs(predict(state, spec, te.inputs, cfg.train), te.labels, cfg.train.n_bins)
    atomic_write(out / "config.json", dump_config(cfg))
    atomic_write(out / "train_log.csv", log.to_csv())
    atomic_write(out / "reliability.csv", format_reliability(reliability_diagram(report)))
    atomic_write(out / "report.json", _report_json(acc, report, {"optimizer": log.optimizer}))
    if isinstance(state, VariationalPosterior):
        ck = checkpoint.Checkpoint(spec, state, cfg.train.prior, cfg.train.seed)
        atomic_write(out / "checkpoint.bin", checkpoint.encode(ck))
    print(f"accuracy {acc:.4f}  ece {report.ece:.4f}  -> {out}")
    return 0


def _fmt(v):
    if v is None:
        return "NA"
    return repr(float(v)) if isinstance(v, float) else str(v)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    workers = _threads(args) or int(cfg.sweep["workers"])
    rows = run_sweep(cfg, workers)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    atomic_write(out / "config.json", dump_config(cfg))
    atomic_write(out / "sweep.csv", buf.getvalue())
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} cells, {len(failed)} failed -> {out / 'sweep.csv'}")
    for r in failed:
        print(f"  {r['objective']} lambda={r['lambda']} seed={r['seed']}: {r['status']}", file=sys.stderr)
    return 1 if failed else 0


def cmd_evaluate(args) -> int:
    ck = checkpoint.load(args.checkpoint)
    cfg = _load(args)
    if args.seed is None:
        cfg = cfg.with_seed(ck.seed)
    tr, te = prepare_data(cfg)
    ds = {"test": te, "train": tr}[args.split]
    spec = model_spec(cfg, tr)
    if spec != ck.spec:
        raise ConfigError(f"checkpoint spec {ck.spec} does not match the config's model {spec}")
    n_bins = args.bins if args.bins is not None else cfg.train.n_bins
    r_eval = args.r_eval if args.r_eval is not None else cfg.train.r_eval
    probs = ensemble_predict(ck.posterior, spec, ds.inputs, r_eval, ck.seed)
    acc, report = evaluate_probs(probs, ds.labels, n_bins)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "eval_reliability.csv", format_reliability(reliability_diagram(report)))
    atomic_write(out / "eval_report.json", _report_json(acc, report, {"split": args.split, "r_eval": r_eval}))
    print(f"accuracy {acc:.4f}  ece {report.ece:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calibra", description="Calibration-aware Bayesian neural networks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--threads", type=int, help="worker count; falls back to CALIBRA_THREADS")

    common(sub.add_parser("train", help="train one configuration"))
    common(sub.add_parser("sweep", help="run the objective x lambda x seed grid"))
    ev = sub.add_parser("evaluate", help="re-evaluate a posterior checkpoint")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--bins", type=int, help="ECE bin count M")
    ev.add_argument("--r-eval", type=int, dest="r_eval", help="ensemble size")
    ev.add_argument("--split", choices=("test", "train"), default="test")
    return p


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, checkpoint.CheckpointError, TrainingAborted, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
