"""Command line runner.

    syncsde run CONFIG [--seeds-override S ...] [--out DIR] [--workers K]
    syncsde spectral-check [--p-max P] [--out DIR]
    syncsde print-config-schema

Exit status: 0 all assertions pass, 1 an assertion failed, 2 inconclusive
(too many flagged seeds), 3 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import ConfigErrors, ExperimentConfig, config_from_dict, config_schema, load_config
from .errors import ConfigurationError
from .experiments import EXPERIMENT_TABLE

log = logging.getLogger("syncsde")

OUTPUT_ENV = "SYNCSDE_OUTPUT_DIR"
EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_CONFIG = 0, 1, 2, 3


@dataclass
class RunSummary:
    experiment: str
    config_hash: str
    seeds: list
    status: str
    assertions: list
    scalars: dict
    files: list
    flagged: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return {"pass": EXIT_PASS, "fail": EXIT_FAIL}.get(self.status, EXIT_INCONCLUSIVE)

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "status": self.status,
            "assertions": [a.as_dict() for a in self.assertions],
            "scalars": self.scalars,
            "files": self.files,
            "flagged": {str(k): v for k, v in self.flagged.items()},
        }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, int)) and not isinstance(v, float):
        return str(int(v))
    return "%.12g" % float(v)


def write_csv(path: Path, cfg_hash: str, experiment: str, columns, rows) -> None:
    """CSV with a ``#`` provenance line, a column header, then data rows."""
    width = max((len(r) for r in rows), default=len(columns))
    cols = list(columns)
    if cols and cols[-1] == "values...":
        cols = cols[:-1] + [f"v{i}" for i in range(width - len(cols) + 1)]
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash} experiment={experiment} columns={','.join(cols)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _chunks(seq, k):
    k = max(1, min(k, len(seq)))
    size = -(-len(seq) // k)
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def _compute(name, cfg, seeds):
    return EXPERIMENT_TABLE[name].compute(cfg, seeds)


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1) -> RunSummary:
    """Run the configured experiment, write its CSVs and ``summary.json``."""
    exp = EXPERIMENT_TABLE[cfg.experiment]
    out = Path(out_dir or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "syncsde-out")
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    seeds = list(cfg.seeds) if exp.uses_seeds else []

    if not exp.uses_seeds:
        records = exp.compute(cfg, [])
    elif workers > 1 and len(seeds) > 1:
        parts = _chunks(seeds, workers)
        with ProcessPoolExecutor(max_workers=len(parts)) as pool:
            futures = [pool.submit(_compute, cfg.experiment, cfg, part) for part in parts]
            records = [r for f in futures for r in f.result()]
    else:
        records = exp.compute(cfg, seeds)

    files = []
    for table, columns in exp.tables.items():
        rows = [row for rec in records for row in rec.rows.get(table, [])]
        name = f"{table}.csv"
        write_csv(out / name, h, cfg.experiment, columns, rows)
        files.append(name)

    flagged = {rec.seed: rec.reason for rec in records if rec.flagged}
    assertions, scalars = exp.assess(cfg, records)
    budget = cfg.tolerances.flagged_budget
    if exp.uses_seeds and len(flagged) > budget * len(seeds):
        status = "inconclusive"
    else:
        status = "pass" if all(a.passed for a in assertions if a.asserted) else "fail"
    summary = RunSummary(cfg.experiment, h, seeds, status, assertions, scalars, files + ["summary.json"],
                         flagged)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _report(summary: RunSummary, out_dir, elapsed: float) -> None:
    for a in summary.assertions:
        tag = "PASS" if a.passed else "FAIL"
        if not a.asserted:
            tag = f"info:{tag.lower()}"
        print(f"[{tag}] {summary.experiment}: {a.name}: observed={a.observed:.6g} "
              f"{a.comparison} {a.threshold:.6g}")
    if summary.flagged:
        print(f"flagged seeds: {sorted(summary.flagged, key=str)}")
    print(f"status={summary.status} hash={summary.config_hash} out={out_dir} ({elapsed:.2f}s)")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="syncsde", description="Coupled SODE synchronization experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a TOML config")
    r.add_argument("config")
    r.add_argument("--seeds-override", nargs="+", type=int)
    r.add_argument("--out")
    r.add_argument("--workers", type=int, default=1)
    s = sub.add_parser("spectral-check", help="closed-form spectra against a dense eigensolver")
    s.add_argument("--p-max", type=int, default=50)
    s.add_argument("--out")
    sub.add_parser("print-config-schema", help="print the JSON schema of the config file")
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "print-config-schema":
        print(json.dumps(config_schema(), indent=2, sort_keys=True))
        return EXIT_PASS

    try:
        if args.command == "spectral-check":
            cfg = config_from_dict({"experiment": "spectral-check", "p_max": args.p_max})
            workers = 1
        else:
            cfg = load_config(args.config)
            if args.seeds_override:
                cfg = cfg.with_seeds(args.seeds_override)
            workers = args.workers
        if workers < 1:
            raise ConfigurationError("--workers must be >= 1")
    except ConfigErrors as exc:
        for path, msg in exc.problems:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "syncsde-out"
    t0 = time.perf_counter()
    try:
        summary = run_experiment(cfg, out_dir, workers)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _report(summary, out_dir, time.perf_counter() - t0)
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
