"""Command-line entry point.

Exit codes: 0 success, 1 a check or stage failed, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .pipeline import (METHODS, MixedConfigError, RunRecord, StageError, emit_report, evaluate, load_dataset,
                       load_model, make_dataset, read_samples, run_experiment, sample_stage, train_stage,
                       write_metrics, write_samples)
from .verify import run_all

log = logging.getLogger("pogdiff")


def _common(p: argparse.ArgumentParser, method: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config (defaults when omitted)")
    p.add_argument("--seed", type=int, default=None, help="master seed (default: first of eval.seeds)")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    if method:
        p.add_argument("--method", choices=METHODS, default="pogdiff")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pogdiff", description="Toy PoGDiff laboratory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("gen-data", help="write the synthetic dataset CSV"))
    _common(sub.add_parser("train", help="train a denoiser and write checkpoint + loss trace"), method=True)
    _common(sub.add_parser("sample", help="DDIM-sample each identity from a trained checkpoint"))
    _common(sub.add_parser("eval", help="compute gRecall and toy FID from samples.csv"), method=True)
    vm = sub.add_parser("verify-math", help="run the numerical self-checks")
    vm.add_argument("--fast", action="store_true", help="10x fewer trials")
    ab = sub.add_parser("ab-run", help="vanilla vs PoGDiff over every configured seed")
    _common(ab)
    ab.add_argument("--seeds", type=int, nargs="+", help="override eval.seeds")
    rp = sub.add_parser("report", help="aggregate record.json files")
    rp.add_argument("records", type=Path, nargs="+", help="record.json files or directories holding them")
    rp.add_argument("--out", type=Path, default=Path("report"))
    rp.add_argument("--force", action="store_true", help="allow records from different configs")
    rp.add_argument("--coverage", action="store_true", help="also write per-identity coverage.csv")
    return parser


def _seed(args, config: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else config.eval.seeds[0]


def _collect_records(paths) -> list[RunRecord]:
    files = []
    for p in paths:
        files += sorted(p.rglob("record.json")) if p.is_dir() else [p]
    return [RunRecord.load(f) for f in files]


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "verify-math":
        checks = run_all(fast=args.fast)
        for c in checks:
            print(c.line())
        return 0 if all(c.passed for c in checks) else 1

    if args.command == "report":
        missing = [p for p in args.records if not p.exists()]
        if missing:
            print(f"missing input: {missing[0]}", file=sys.stderr)
            return 2
        records = _collect_records(args.records)
        if not records:
            print("no records found", file=sys.stderr)
            return 2
        try:
            emit_report(records, args.out, force=args.force, coverage_breakdown=args.coverage)
        except MixedConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print((args.out / "report.txt").read_text(), end="")
        return 0

    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "gen-data":
            make_dataset(config, _seed(args, config)).to_csv(out / "dataset.csv")
        elif args.command == "train":
            seed = _seed(args, config)
            dataset = make_dataset(config, seed)
            dataset.to_csv(out / "dataset.csv")
            train_stage(config, dataset, args.method, seed, out)
        elif args.command == "sample":
            seed = _seed(args, config)
            model = load_model(out / "model.ckpt")
            write_samples(out / "samples.csv", sample_stage(config, model, load_dataset(out / "dataset.csv"), seed))
        elif args.command == "eval":
            seed = _seed(args, config)
            rows, _ = evaluate(config, load_dataset(out / "dataset.csv"), read_samples(out / "samples.csv"),
                               args.method, seed)
            write_metrics(out / "metrics.csv", rows)
            for r in rows:
                print(f"{r['method']} seed={r['seed']} {r['shot']} {r['metric']} = {r['value']:.4f}")
        elif args.command == "ab-run":
            seeds = args.seeds or config.eval.seeds
            records = []
            for seed in seeds:
                for method in METHODS:
                    t0 = time.perf_counter()
                    records.append(run_experiment(config, method, seed, out / f"{method}_seed{seed}"))
                    log.info("%s seed %d done in %.1fs", method, seed, time.perf_counter() - t0)
            emit_report(records, out, coverage_breakdown=True)
            print((out / "report.txt").read_text(), end="")
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
