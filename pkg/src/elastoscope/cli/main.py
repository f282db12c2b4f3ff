"""``elastoscope`` command line: run, compare and gradient-check."""

from __future__ import annotations

import argparse
import copy
import csv
import io
import logging
import math
import sys
from pathlib import Path

from ..linalg import LinearSolveError
from .artifacts import load_manifest
from .config import ConfigError, load_config
from .pipelines import AcceptanceFailure, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ACCEPTANCE = 4

COMPARE_COLUMNS = ("run", "method", "err_mu", "err_eta", "iterations", "wall_time", "edge_width")


def _run(cfg: dict, out: str | None, seed: int | None) -> int:
    if seed is not None:
        cfg["cli_harness"]["seed"] = seed
    out_dir = Path(out) if out is not None else None
    try:
        manifest, w = run_pipeline(cfg, out_dir)
    except AcceptanceFailure as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except (LinearSolveError, FloatingPointError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        # bad inputs discovered after validation, e.g. an unreadable field file
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{cfg['cli_harness']['pipeline']}: {manifest['status']} -> {w.dir}")
    for key, val in sorted(manifest["metrics"].items()):
        if isinstance(val, (int, float, str, bool)) or val is None:
            print(f"  {key} = {val}")
    return EXIT_OK


def compare_runs(run_dirs) -> str:
    """CSV summary of several runs on the same grid and phantom, sorted by ``err_mu``."""
    rows = []
    ref = None
    for d in run_dirs:
        m = load_manifest(d)
        cfg = m["config"]
        key = (cfg["field_core"], cfg["phantom_lab"]["phantom"])
        if ref is None:
            ref = (key, d)
        elif key != ref[0]:
            raise ValueError(f"{d}: grid or phantom differs from {ref[1]}")
        met = m["metrics"]
        rows.append({
            "run": str(d),
            "method": met.get("method", cfg["cli_harness"]["pipeline"]),
            "err_mu": met.get("err_mu"),
            "err_eta": met.get("err_eta"),
            "iterations": met.get("iterations", 0),
            "wall_time": m["timings"].get("total"),
            "edge_width": met.get("edge_width"),
        })

    def sort_key(r):
        e = r["err_mu"]
        return (e is None or (isinstance(e, float) and math.isnan(e)), e if e is not None else 0.0, r["run"])

    rows.sort(key=sort_key)
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="elastoscope", description="Viscoelastic shear-modulus reconstruction")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the pipeline named in a config file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides cli_harness.output_dir)")
    r.add_argument("--seed", type=int, help="override cli_harness.seed")
    c = sub.add_parser("compare", help="tabulate metrics of finished runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--output", help="write the CSV here instead of stdout")
    g = sub.add_parser("gradient-check", help="adjoint vs finite-difference gradient check")
    g.add_argument("config")
    g.add_argument("--out")
    g.add_argument("--seed", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "compare":
        try:
            text = compare_runs(args.runs)
        except (ValueError, FileNotFoundError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if args.output:
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "gradient-check":
        cfg = copy.deepcopy(cfg)
        cfg["cli_harness"]["pipeline"] = "gradient-check"
    return _run(cfg, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
