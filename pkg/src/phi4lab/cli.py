"""Command line entry point: `lab run` and `lab plot`."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config
from .io import read_csv, read_json, write_csv, write_json

PLOT_COLUMNS = {"counterterm": ("iteration", "residual", "ratio"), "green-bounds": ("r", "kernel", "envelope"),
                "nelson": ("log_t", "log_P")}


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    from .experiments import run
    workers = args.workers
    if workers is None and os.environ.get("LAB_WORKERS"):
        workers = int(os.environ["LAB_WORKERS"])
    out = Path(args.out or cfg.output_dir)
    timings = {}
    manifest = run(cfg, args.experiment, args.seed, workers, str(out), timings)
    write_json(out / "manifest.json", manifest)
    write_json(out / "timing.json", timings)
    for key, e in manifest["entries"].items():
        bad = [g for g, ok in e["gates"].items() if not ok]
        print(f"{key:32s} {'PASS' if e['passed'] else 'FAIL'}" + (f"  (failed: {', '.join(bad)})" if bad else ""))
    print(f"manifest: {out / 'manifest.json'}")
    return 0 if manifest["all_passed"] else 1


def emit_plot_data(manifest_path, which: str) -> Path:
    """Collect the plot-data CSVs of one experiment into a single long-format file."""
    manifest_path = Path(manifest_path)
    m = read_json(manifest_path)
    entries = [e for e in m["entries"].values() if e["experiment"] == which]
    if not entries:
        raise KeyError(f"manifest has no experiment {which!r}")
    rows = []
    for e in entries:
        for name in e["plot_data"]:
            for r in read_csv(manifest_path.parent / name):
                rows.append({"source": name, **r})
    keep = PLOT_COLUMNS.get(which)
    if keep:
        rows = [{k: r[k] for k in ("source", "series", *keep) if k in r} for r in rows if all(k in r for k in keep)]
    out = manifest_path.parent / f"plot_{which}.csv"
    write_csv(out, rows)
    return out


def cmd_plot(args) -> int:
    try:
        out = emit_plot_data(args.manifest, args.which)
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return 2
    print(out)
    return 0


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="lab")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run experiments and write a manifest")
    r.add_argument("--config")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_run)
    q = sub.add_parser("plot", help="emit long-format plot data for one experiment")
    q.add_argument("--manifest", required=True)
    q.add_argument("--which", required=True)
    q.set_defaults(fn=cmd_plot)
    args = p.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
