"""Command line entry point: ``tdse-stability {check,run,converge,sweep,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, load_config
from .scenario import (
    EXIT_ERROR,
    check_scenario,
    converge_scenario,
    run_scenario,
    sweep_scenario,
)

log = logging.getLogger("tdse_stability")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _axis(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"axis must look like path=v1,v2,..., got {text!r}")
    key, values = text.split("=", 1)
    return key.strip(), [yaml.safe_load(v) for v in values.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario YAML file")
    common.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (FFT or sweep rows)")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    parser = argparse.ArgumentParser(prog="tdse-stability", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="certify the assumptions only")
    sub.add_parser("run", parents=[common], help="full pipeline: certify, evolve, verify")
    conv = sub.add_parser("converge", parents=[common], help="dt self-convergence study")
    conv.add_argument("--dt-ladder", type=_floats, help="comma-separated halving step sizes")
    sw = sub.add_parser("sweep", parents=[common], help="parameter sweep")
    sw.add_argument("--axis", type=_axis, action="append", default=[],
                    help="dotted config path and values, e.g. potential.amplitude=0.05,0.1,0.2")
    rep = sub.add_parser("report", help="pretty-print a JSON report")
    rep.add_argument("path", type=Path)
    rep.add_argument("--quiet", action="store_true")
    return parser


def _print_report(report: dict) -> None:
    print(f"{report.get('schema')} v{report.get('schema_version')}  command={report.get('command')}  "
          f"exit_code={report.get('exit_code')}")
    if "error" in report:
        print(f"error: {report['error']}")
    a = report.get("assumptions")
    if a:
        print("assumptions (band subspace [{a}, {R}], dim {n}):".format(
            a=a["band"]["a"], R=a["band"]["R"], n=a["band_dimension"]))
        for key in ("hardy_constant", "integrability_constant", "positivity_min_eig", "delta"):
            print(f"  {key:24s} {a.get(key)}")
        for key, ok in a.get("certified", {}).items():
            print(f"  certified {key:18s} {'yes' if ok else 'NO'}")
    c = report.get("constants")
    if c:
        print("constants:")
        for key in ("kappa", "a_tilde", "R_tilde", "a1_tilde", "R1_tilde", "c_m", "c_M"):
            print(f"  {key:10s} {c.get(key)}")
    for ch in report.get("checks", []):
        slack = ch.get("min_slack")
        slack = "" if slack is None else f"min slack {slack:.3e} at t={ch.get('argmin_t')}"
        print(f"  [{ch['status']:>13s}] {ch['name']:28s} {slack}")
    conv = report.get("convergence")
    if conv:
        print(f"convergence: fitted order {conv['fitted_order']}, recommended dt {conv['recommended_dt']}")
        for i, dt in enumerate(conv["dt"]):
            diff = conv["terminal_difference"][i] if i < len(conv["terminal_difference"]) else None
            print(f"  dt={dt:<10g} diff={diff}  residual={conv['residual_max'][i]}")
    for row in report.get("sweep", []):
        print(f"  {row['axes']}  exit={row['exit_code']}  C_H={row.get('hardy_constant')}  "
              f"delta={row.get('delta')}  I={row.get('integral')}  {row['status']}")
    for w in report.get("warnings", []):
        print(f"warning: {w}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        try:
            report = json.loads(args.path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            log.error("cannot read report: %s", exc)
            return EXIT_ERROR
        _print_report(report)
        return int(report.get("exit_code", 0))

    if args.config is None:
        log.error("--config is required for %s", args.command)
        return EXIT_ERROR
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    out = args.out if args.out is not None else Path(cfg.output.directory)

    if args.command == "check":
        result = check_scenario(cfg, out)
    elif args.command == "run":
        result = run_scenario(cfg, out, workers=args.threads)
    elif args.command == "converge":
        result = converge_scenario(cfg, out, args.dt_ladder, workers=args.threads)
    else:
        axes = dict(args.axis) if args.axis else None
        result = sweep_scenario(cfg, out, axes, threads=args.threads)
    if not args.quiet:
        _print_report(result.report)
    for kind, path in result.paths.items():
        log.info("wrote %s: %s", kind, path)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
