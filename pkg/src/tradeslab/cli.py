"""Command-line front end.

Subcommands: ``train``, ``eval``, ``landscape``, ``report`` and
``calibrate-fosc``. Exit codes: 0 success, 2 usage/config/data error,
3 numerical failure. ``LAB_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attack import fgsm, pgd, robust_accuracy, square_search
from .checkpoint import Checkpoint
from .config import ExperimentConfig, build_splits, load_config
from .errors import LabError, NumericalError
from .metrics import (MASKING_THRESHOLD, gap_anomalous, landscape, masking_verdict,
                      sample_loss, self_healing_flag)
from .model import Params
from .rng import Rng
from .telemetry import read_epochs_csv, write_batches_jsonl, write_epochs_csv
from .train import fit

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
ATTACKS = ("clean", "pgd", "square", "fgsm")
_EVAL_STREAM = 11


def _thread_limit():
    raw = os.environ.get("LAB_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise LabError(f"LAB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise LabError(f"LAB_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _load_model(ckpt_path, cfg: ExperimentConfig, split_name="test"):
    ckpt = Checkpoint.load(ckpt_path)
    train, val, test = build_splits(cfg.dataset)
    ds = {"train": train, "val": val, "test": test}[split_name]
    if ckpt.spec.input_dim != ds.d or ckpt.spec.num_classes != ds.k:
        raise LabError(f"checkpoint expects d={ckpt.spec.input_dim}, k={ckpt.spec.num_classes}; "
                       f"dataset has d={ds.d}, k={ds.k}")
    return ckpt, ckpt.params(), ds


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, val, _ = build_splits(cfg.dataset)
    tcfg = cfg.train_config()
    (out / "resolved-config.json").write_text(cfg.to_json(), encoding="utf-8")
    result = fit(tcfg, train, val, on_epoch=lambda rec, _res: _log_epoch(rec))
    write_epochs_csv(result.epochs, out / "epochs.csv")
    write_batches_jsonl(result.batches, out / "batches.jsonl")
    if result.best is not None:
        result.best.save(out / "best.ckpt")
    else:
        print("warning: no epoch met the checkpoint rule; best.ckpt not written", file=sys.stderr)
    return EXIT_OK


def _log_epoch(rec):
    print(f"epoch {rec.epoch:3d} lr={rec.lr:.4g} clean_train={rec.clean_train_acc:.4f} "
          f"adv_train={rec.adv_train_acc:.4f} val={rec.clean_val_acc:.4f} pgd={rec.pgd_val_acc:.4f} "
          f"fosc={rec.fosc_mean:.5f} sgcs={rec.sgcs_mean:.4f}"
          + (" [guard]" if rec.guard_triggered else ""), file=sys.stderr)


def evaluate(params: Params, ds, cfg: ExperimentConfig, attacks=ATTACKS, seed=None) -> dict:
    """Clean / PGD / square-search accuracies and the masking verdict."""
    lo, hi = ds.domain_lo, ds.domain_hi
    eps = cfg.attack.epsilon
    root = Rng(cfg.seed if seed is None else seed).child(_EVAL_STREAM)
    report = {"n": ds.n, "epsilon": eps}
    clean_losses = [sample_loss(params, x, y) for x, y in zip(ds.features, ds.labels)]
    report["clean_acc"] = robust_accuracy(params, ds, lambda p, x, y: x)
    report["clean_loss"] = float(np.mean(clean_losses)) if clean_losses else 0.0
    report["per_sample_clean_loss"] = clean_losses
    if "pgd" in attacks:
        atk = replace(cfg.attack, objective="ce", steps=cfg.eval.pgd_steps)
        prng = root.child(1)
        report["pgd_steps"] = cfg.eval.pgd_steps
        report["pgd_acc"] = robust_accuracy(
            params, ds, lambda p, x, y: pgd(p, x, y, atk, lo, hi, rng=prng).x_adv)
    if "fgsm" in attacks:
        report["fgsm_acc"] = robust_accuracy(params, ds, lambda p, x, y: fgsm(p, x, y, eps, lo, hi).x_adv)
    if "square" in attacks:
        srng = root.child(2)
        report["square_queries"] = cfg.eval.square_queries
        report["square_acc"] = robust_accuracy(
            params, ds,
            lambda p, x, y: square_search(p, x, y, eps, cfg.eval.square_queries, srng, lo, hi)[0])
    if "pgd_acc" in report and "square_acc" in report:
        report["whitebox_blackbox_gap"] = report["pgd_acc"] - report["square_acc"]
        report["masking_threshold"] = MASKING_THRESHOLD
        report["masking_verdict"] = masking_verdict(report["pgd_acc"], report["square_acc"])
    return report


def _parse_attacks(raw):
    if raw is None:
        return ATTACKS
    names = tuple(a.strip() for a in raw.split(",") if a.strip())
    bad = [a for a in names if a not in ATTACKS]
    if bad:
        raise LabError(f"unknown attack(s) {bad}; choose from {list(ATTACKS)}")
    return names


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.seed)
    attacks = _parse_attacks(args.attacks)
    _, params, ds = _load_model(args.ckpt, cfg, args.split)
    report = evaluate(params, ds, cfg, attacks)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    summary = {k: v for k, v in report.items() if k != "per_sample_clean_loss"}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = load_config(args.config, args.seed)
    _, params, ds = _load_model(args.ckpt, cfg, args.split)
    if not 0 <= args.index < ds.n:
        raise LabError(f"sample index {args.index} out of range [0, {ds.n})")
    radius = cfg.attack.epsilon if args.radius is None else args.radius
    grid = landscape(params, ds.features[args.index], int(ds.labels[args.index]), radius,
                     args.res, Rng(cfg.seed).child(_EVAL_STREAM, 3, args.index),
                     ds.domain_lo, ds.domain_hi)
    Path(args.out).write_text(grid.to_csv(), encoding="utf-8")
    c = args.res // 2
    print(f"wrote {args.res * args.res} rows to {args.out}; clean loss z(0,0)={float(grid.z[c, c])!r}")
    return EXIT_OK


def build_report(rows, fosc_threshold, eval_report=None) -> str:
    lines = []
    spikes = [r["epoch"] for r in rows if r["fosc_mean"] > fosc_threshold]
    guards = [r["epoch"] for r in rows if r["guard_triggered"]]
    noised = [(r["epoch"], r["noise_batches_applied"]) for r in rows if r["noise_batches_applied"] > 0]
    negative = [r["epoch"] for r in rows if gap_anomalous(r["gap"])]
    healing = [rows[i]["epoch"] for i in range(1, len(rows) - 1)
               if self_healing_flag(rows[i - 1:i + 2], fosc_threshold)]
    lines.append(f"epochs: {len(rows)}  fosc_threshold: {fosc_threshold}")
    if spikes:
        lines.append(f"FOSC above threshold at epochs: {', '.join(map(str, spikes))}")
        lines.append(f"instability first occurs at epoch {spikes[0]}")
    if guards:
        lines.append(f"guard armed after epochs: {', '.join(map(str, guards))}")
    if noised:
        lines.append("noised batches: " + ", ".join(f"epoch {e} ({n})" for e, n in noised))
    if negative:
        lines.append(f"negative clean-adversarial gap at epochs: {', '.join(map(str, negative))}")
    if healing:
        lines.append(f"self-healing signature at epochs: {', '.join(map(str, healing))}")
    if eval_report and "masking_verdict" in eval_report:
        verdict = "gradient masking suspected" if eval_report["masking_verdict"] else "no masking"
        lines.append(f"eval: pgd_acc={eval_report['pgd_acc']:.4f} square_acc={eval_report['square_acc']:.4f} "
                     f"-> {verdict}")
    if not (spikes or negative or healing or (eval_report or {}).get("masking_verdict")):
        lines.append("verdict: no instability detected")
    else:
        lines.append("verdict: instability detected")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    d = Path(args.telemetry_dir)
    if not (d / "epochs.csv").is_file():
        raise LabError(f"{d / 'epochs.csv'} not found")
    rows = read_epochs_csv(d / "epochs.csv")
    threshold = args.fosc_threshold
    if threshold is None and (d / "resolved-config.json").is_file():
        threshold = json.loads((d / "resolved-config.json").read_text())["train"].get("fosc_threshold")
        threshold = math.inf if threshold is None else threshold
    threshold = 0.1 if threshold is None else threshold
    eval_report = None
    if (d / "eval.json").is_file():
        eval_report = json.loads((d / "eval.json").read_text())
    text = build_report(rows, threshold, eval_report)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    """Short guard-free run; prints the per-epoch validation FOSC distribution."""
    cfg = load_config(args.config, args.seed)
    train, val, _ = build_splits(cfg.dataset)
    tcfg = replace(cfg.train_config(), epochs=args.epochs, fosc_threshold=math.inf)
    means = []
    qs = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)
    print("epoch  mean      " + "  ".join(f"q{int(q * 100):<7d}" for q in qs))

    def show(rec, res):
        means.append(res.fosc_mean)
        vals = np.quantile(res.fosc_values, qs)
        print(f"{rec.epoch:5d}  {res.fosc_mean:.6f}  " + "  ".join(f"{v:.6f}" for v in vals))

    fit(tcfg, train, val, on_epoch=show)
    if means:
        print(f"suggested fosc_threshold (2 x largest epoch mean): {2 * max(means):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tradeslab", description="TRADES adversarial training with gradient-masking diagnostics.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write telemetry")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="clean / PGD / square-search evaluation")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--attacks", help=f"comma list from {','.join(ATTACKS)}")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    ls = sub.add_parser("landscape", help="write the a,b,z loss grid for one sample")
    ls.add_argument("--ckpt", required=True)
    ls.add_argument("--config", required=True)
    ls.add_argument("--index", type=int, required=True)
    ls.add_argument("--out", required=True)
    ls.add_argument("--radius", type=float)
    ls.add_argument("--res", type=int, default=21)
    ls.add_argument("--split", choices=("train", "val", "test"), default="test")
    ls.add_argument("--seed", type=int)
    ls.set_defaults(func=cmd_landscape)

    r = sub.add_parser("report", help="summarise a telemetry directory")
    r.add_argument("telemetry_dir")
    r.add_argument("--fosc-threshold", type=float)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("calibrate-fosc", help="print the FOSC distribution of a short run")
    c.add_argument("--config", required=True)
    c.add_argument("--epochs", type=int, default=3)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
