"""``flsim`` command line: run, compare, sweep.

Exit codes: 0 success, 1 runtime error, 2 validation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import metrics
from .config import ConfigError, from_dict, locate, parse_config_text, read_config_text
from .simulator import run

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
SWEEP_PARAMS = ("lambda", "beta")
SWEEP_COLUMNS = ("value", "final_train_loss", "final_eval_metric", "mean_round_time",
                 "mean_utilization", "mean_E")


def _err(msg: str) -> None:
    print(f"flsim: {msg}", file=sys.stderr)


def _load(config_path):
    """Return ``(config, None)`` or ``(None, exit_code)`` after reporting."""
    try:
        text, label = read_config_text(config_path)
    except (FileNotFoundError, OSError) as e:
        _err(str(e))
        return None, EXIT_INVALID
    try:
        return parse_config_text(text), None
    except ConfigError as e:
        line = locate(text, e.path)
        where = f"{label}:{line}" if line else label
        _err(f"{where}: invalid config: {e}")
        return None, EXIT_INVALID


def default_out(config_path) -> Path:
    root = Path(os.environ.get("FLSIM_OUT", "runs"))
    return root / Path(str(config_path)).stem


def cmd_run(config_path, out_dir=None) -> int:
    config, code = _load(config_path)
    if config is None:
        return code
    out = Path(out_dir) if out_dir else default_out(config_path)
    try:
        log = run(config)
        csv_path, summary_path = metrics.write_run(log, out)
    except Exception as e:  # noqa: BLE001 - surfaced as exit 1
        _err(f"run failed: {type(e).__name__}: {e}")
        return EXIT_RUNTIME
    s = log.summary
    print(f"{config.strategy}: {s['rounds']} rounds, final loss {s['final_train_loss']:.6g}, "
          f"eval {s['final_eval_metric']:.6g}, {s['mean_round_time']:.6g} s/round")
    print(f"wrote {csv_path} and {summary_path}")
    return EXIT_OK


def cmd_compare(baseline_dir, candidate_dir, out_path=None) -> int:
    try:
        base = metrics.load_run(baseline_dir)
        cand = metrics.load_run(candidate_dir)
        report = metrics.compare(base, cand)
    except (OSError, KeyError, json.JSONDecodeError, ValueError) as e:
        _err(f"cannot compare: {e}")
        return EXIT_INVALID
    out = Path(out_path) if out_path else Path(candidate_dir) / "comparison.json"
    try:
        out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    except OSError as e:
        _err(f"cannot write report: {e}")
        return EXIT_RUNTIME
    print(f"time saving: {report.saving_percent:.2f}% "
          f"({report.baseline_mean_time:.6g} -> {report.candidate_mean_time:.6g} s/round)")
    print(f"final train loss delta: {report.train_loss_delta:+.6g}, "
          f"eval metric delta: {report.eval_metric_delta:+.6g}")
    return EXIT_OK


def _parse_values(values) -> list[float]:
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    return [float(v) for v in values]


def cmd_sweep(config_path, param, values, out_dir=None) -> int:
    if param not in SWEEP_PARAMS:
        _err(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
        return EXIT_INVALID
    try:
        values = _parse_values(values)
    except ValueError as e:
        _err(f"bad --values: {e}")
        return EXIT_INVALID
    if not values:
        _err("--values is empty")
        return EXIT_INVALID
    config, code = _load(config_path)
    if config is None:
        return code
    if out_dir:
        out = Path(out_dir)
    else:
        run_dir = default_out(config_path)
        out = run_dir.with_name(f"{run_dir.name}-sweep-{param}")
    base = config.to_dict()
    rows = []
    for v in values:
        d = json.loads(json.dumps(base))
        d["optimizer"][param] = v
        try:
            cfg = from_dict(d)
        except ConfigError as e:
            _err(f"{param}={v}: invalid config: {e}")
            return EXIT_INVALID
        try:
            log = run(cfg)
            metrics.write_run(log, out / f"{param}={v:g}")
        except Exception as e:  # noqa: BLE001
            _err(f"{param}={v}: run failed: {type(e).__name__}: {e}")
            return EXIT_RUNTIME
        s = log.summary
        rows.append([format(v, "g")] + [format(s[k], ".12g") for k in SWEEP_COLUMNS[1:]])
        print(f"{param}={v:g}: final loss {s['final_train_loss']:.6g}, "
              f"eval {s['final_eval_metric']:.6g}")
    with (out / "sweep.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("config", help="JSON config file or bundled preset name")
    p.add_argument("--out", help="output directory (default $FLSIM_OUT/<config name>)")

    p = sub.add_parser("compare", help="compare a candidate run against a baseline run")
    p.add_argument("baseline")
    p.add_argument("candidate")
    p.add_argument("--out", help="report path (default <candidate>/comparison.json)")

    p = sub.add_parser("sweep", help="rerun a config over values of lambda or beta")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma separated, e.g. 0,0.2,0.5,0.8")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out)
    if args.command == "compare":
        return cmd_compare(args.baseline, args.candidate, args.out)
    return cmd_sweep(args.config, args.param, args.values, args.out)


if __name__ == "__main__":
    sys.exit(main())
