"""Command-line front end.

Four subcommands: `run` trains a single config, `sweep` executes a
hyperparameter grid, `report` summarizes a directory of run records, and
`verify` runs the built-in algebra checks.  A diverged run is a result,
not an error; the exit code is nonzero only for crashes, bad usage, or
failed verification.
"""

from __future__ import annotations

import argparse
import dataclasses
import re
import sys
from pathlib import Path

from .config import config_hash, parse_config
from .metrics import ablation_table, spread_table, summary_table
from .sweep import parse_sweep_config, run_sweep
from .training import STATUS_OK, load_record, save_record, train_run
from .verify import run_verification

RECORD_NAME = re.compile(r"^[0-9a-f]{16}\.txt$")


def _with_seed(cfg, seed):
    if seed is None:
        return cfg
    workload = dataclasses.replace(cfg.workload, seed=seed, data_seed=seed)
    return dataclasses.replace(cfg, workload=workload)


def _cmd_run(args) -> int:
    cfg = _with_seed(parse_config(Path(args.config).read_text()), args.seed)
    record = train_run(cfg)
    out_dir = Path(args.out)
    path = save_record(record, out_dir)
    print(f"config_hash = {config_hash(cfg)}")
    print(f"status = {record.status}")
    print(f"final_train_loss = {record.final_train_loss()!r}")
    print(f"final_val_loss = {record.final_val_loss!r}")
    print(f"record = {path}")
    return 0


def _cmd_sweep(args) -> int:
    base_cfg, grid = parse_sweep_config(Path(args.config).read_text())
    base_cfg = _with_seed(base_cfg, args.seed)
    result = run_sweep(base_cfg, grid, Path(args.out), parallel=args.parallel)
    print(result.report())
    print(f"records = {Path(args.out)}")
    return 0


def load_records(out_dir):
    """Load every run record in a directory, ignoring report files."""
    records = []
    for path in sorted(Path(out_dir).iterdir()):
        if RECORD_NAME.match(path.name):
            records.append(load_record(path))
    return records


def _cmd_report(args) -> int:
    out_dir = Path(args.out)
    if not out_dir.is_dir():
        print(f"no such directory: {out_dir}", file=sys.stderr)
        return 1
    records = load_records(out_dir)
    if not records:
        print(f"no run records in {out_dir}", file=sys.stderr)
        return 1
    tables = {
        "summary.csv": summary_table(records),
        "ablation.csv": ablation_table(records),
        "spread.csv": spread_table(records),
    }
    for name, text in tables.items():
        (out_dir / name).write_text(text)
    ok = sum(1 for r in records if r.status == STATUS_OK)
    print(f"{len(records)} records ({len(records) - ok} failed) in {out_dir}")
    print()
    print(tables["summary.csv"])
    print(f"wrote {', '.join(tables)}")
    return 0


def _cmd_verify(args) -> int:
    return 1 if run_verification() else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="whitenopt",
        description="train and compare matrix-whitening update rules",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a single config and save its record")
    run.add_argument("--config", required=True, help="run config file")
    run.add_argument("--out", default="runs", help="record directory")
    run.add_argument("--seed", type=int, default=None, help="override both workload seeds")
    run.set_defaults(fn=_cmd_run)

    sweep = sub.add_parser("sweep", help="execute a hyperparameter grid")
    sweep.add_argument("--config", required=True, help="sweep config file")
    sweep.add_argument("--out", default="runs", help="record directory")
    sweep.add_argument("--parallel", type=int, default=1, help="concurrent trials")
    sweep.add_argument("--seed", type=int, default=None, help="override both workload seeds")
    sweep.set_defaults(fn=_cmd_sweep)

    report = sub.add_parser("report", help="summarize a directory of run records")
    report.add_argument("--out", default="runs", help="record directory")
    report.set_defaults(fn=_cmd_report)

    verify = sub.add_parser("verify", help="run the built-in algebra checks")
    verify.set_defaults(fn=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
