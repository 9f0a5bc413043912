"""Command-line front end: ``run``, ``verify`` and ``export``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import fieldio
from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
OUTPUT_ROOT_ENV = "QHJB_OUTPUT_ROOT"


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "matplotlib", "pydantic", "PyYAML"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def resolve_output(output: str) -> Path:
    path = Path(output)
    if path.is_absolute():
        return path
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / path


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n"


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(obj) -> bool:
    if isinstance(obj, dict):
        return all(_finite(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return all(_finite(v) for v in obj)
    if isinstance(obj, float):
        return np.isfinite(obj)
    return True


def run(config_path, output_override=None) -> int:
    from .scenarios import RUNNERS

    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out_dir = Path(output_override) if output_override else resolve_output(cfg.output)
    start = time.perf_counter()
    try:
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            outcome = RUNNERS[cfg.scenario](cfg)
    except FloatingPointError as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"scenario rejected the configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    summary = {"scenario": cfg.scenario, "seed": cfg.seed,
               "assertions": outcome.assertions, "measurements": outcome.measurements,
               "allAssertionsPassed": all(a["passed"] for a in outcome.assertions.values())}
    if not _finite(summary):
        print("numerical fault: non-finite value in summary", file=sys.stderr)
        return EXIT_NUMERICAL
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, f in outcome.fields.items():
        fieldio.write_field_csv(out_dir / "fields" / f"{name}.csv", f)
        written.append(f"fields/{name}.csv")
    for name, pos in outcome.ensembles.items():
        fieldio.write_ensemble_csv(out_dir / "ensembles" / f"{name}.csv", pos)
        written.append(f"ensembles/{name}.csv")
    for fig in outcome.figures:
        written.append(str(fig(out_dir / "figures").relative_to(out_dir)))
    (out_dir / "summary.json").write_text(_json(summary))
    manifest = {"config": cfg.resolved(), "configPath": str(Path(config_path).resolve()),
                "seed": cfg.seed, "versions": _versions(), "wallTimeSeconds": time.perf_counter() - start,
                "finishedAt": datetime.now(timezone.utc).isoformat(), "files": ["summary.json"] + written}
    (out_dir / "manifest.json").write_text(_json(manifest))
    print(f"{cfg.scenario}: {len(outcome.assertions)} assertions "
          f"({sum(a['passed'] for a in outcome.assertions.values())} passed), "
          f"{len(outcome.measurements)} measurements -> {out_dir}")
    return EXIT_OK


def verify(suite: str) -> int:
    from .acceptance import SUITES, run_suite

    if suite not in SUITES:
        print(f"unknown suite {suite!r}; choose from {sorted(SUITES)}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{'criterion':<10} {'status':<9} {'measured':>13}  {'bound':<18} title")

    def show(row):
        bound = "-" if row.bound is None else f"{row.comparison} {row.bound:.3g}"
        print(f"{row.criterion:<10} {row.status:<9} {row.measured:>13.6g}  {bound:<18} {row.title}", flush=True)

    rows = run_suite(suite, show)
    failed = [r for r in rows if r.kind == "assertion" and not r.passed]
    print(f"{len(rows)} rows, {len(failed)} failed assertions")
    return EXIT_OK if not failed else EXIT_FAILED


def export(run_dir, fmt: str) -> int:
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.is_file():
        print(f"no summary.json in {run_dir}", file=sys.stderr)
        return EXIT_INVALID
    summary = json.loads(summary_path.read_text())
    if fmt == "csv":
        target = run_dir / "summary.csv"
        with target.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["section", "name", "value", "bound", "passed", "toleranceSource"])
            for name, a in summary["assertions"].items():
                w.writerow(["assertion", name, repr(a["value"]), repr(a["bound"]), a["passed"], a["toleranceSource"]])
            for name, m in summary["measurements"].items():
                v = m["value"]
                w.writerow(["measurement", name, repr(v) if isinstance(v, float) else json.dumps(v), "", "", ""])
    else:
        target = run_dir / "export.json"
        fields = {}
        for path in sorted((run_dir / "fields").glob("*.csv")):
            with path.open(newline="") as fh:
                rows = list(csv.reader(fh))
            fields[path.stem] = {col: [float(r[i]) for r in rows[1:]] for i, col in enumerate(rows[0])}
        target.write_text(_json({"summary": summary, "fields": fields}))
    print(target)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qhjb", description="Madelung, stochastic-transform and dynamic-programming experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a scenario config")
    r.add_argument("config")
    r.add_argument("--output", help="override the configured output directory")
    v = sub.add_parser("verify", help="run an acceptance suite")
    v.add_argument("suite", choices=["identities", "convergence", "stochastic", "dp", "all"])
    e = sub.add_parser("export", help="convert a run's summary and fields")
    e.add_argument("run_dir")
    e.add_argument("--format", choices=["csv", "json"], default="csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.output)
    if args.command == "verify":
        return verify(args.suite)
    return export(args.run_dir, args.format)


if __name__ == "__main__":
    sys.exit(main())
