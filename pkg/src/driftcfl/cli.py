"""Command line entry point.

Exit codes: 0 success, 1 invalid input/config, 2 runtime failure,
3 a theory check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, load_config
from .engine import ABLATION_AXES, ResumeError, report, resume, run_ablation, run_experiment

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_THEORY = 0, 1, 2, 3

logger = logging.getLogger("driftcfl")


def _load_theory_params(path: Optional[str]):
    from .theory import TheorySuiteConfig

    if path is None:
        return TheorySuiteConfig()
    text = Path(path).read_bytes()
    if path.endswith(".json"):
        data = json.loads(text)
    else:
        from .config import tomllib

        data = tomllib.loads(text.decode())
    return TheorySuiteConfig.from_dict(data)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    res = run_experiment(cfg, args.out)
    print(json.dumps({"out_dir": str(res.out_dir), "final_accuracy": res.summary["final_accuracy"],
                      "rounds": res.summary["rounds"]}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    values = None
    if args.values:
        values = [json.loads(v) if v[:1].isdigit() or v[:1] in "-." else v for v in args.values.split(",")]
    table = run_ablation(cfg, args.axis, args.out, values)
    for cell in table:
        acc = cell.get("final_accuracy")
        print(f"{args.axis}={cell['value']!r}: {cell['status']}"
              + (f" final_accuracy={acc:.4f}" if acc is not None else f" ({cell['error']})"))
    return EXIT_OK if all(c["status"] == "ok" for c in table) else EXIT_RUNTIME


def cmd_verify_theory(args) -> int:
    from .theory import run_suite

    cfg = _load_theory_params(args.params)
    rep = run_suite(cfg)
    text = json.dumps(rep, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    for check in rep["checks"]:
        print(f"{check['name']}: {'pass' if check['passed'] else 'FAIL'} "
              f"(empirical {check['empirical']:.6g}, bound {check['bound']:.6g})")
    print(f"runtime {rep['runtime_s']:.2f}s")
    return EXIT_OK if rep["all_passed"] else EXIT_THEORY


def cmd_resume(args) -> int:
    res = resume(args.run_dir)
    print(json.dumps({"out_dir": str(res.out_dir), "final_accuracy": res.summary["final_accuracy"]}))
    return EXIT_OK


def cmd_report(args) -> int:
    report(args.run_dir, sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftcfl", description="Clustered federated learning under data drift")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a TOML config")
    p.add_argument("config")
    p.add_argument("--out", help="run directory (default: output root / run name)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="sweep one axis over its values")
    p.add_argument("config")
    p.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    p.add_argument("--values", help="comma-separated override of the axis values")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify-theory", help="run the convergence-bound checks")
    p.add_argument("--params", help="TOML or JSON file overriding suite parameters")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("resume", help="continue a run from its latest checkpoint")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("report", help="emit TTA and heterogeneity series as CSV")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except ResumeError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as err:
        logger.exception("run failed")
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
