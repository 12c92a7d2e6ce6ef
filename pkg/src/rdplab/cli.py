"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 configuration or I/O
error, 3 solver non-convergence under --strict (or the config policy).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from .config import load_config
from .report import (compare_halved, emit_plot_data, gap_to_dict, perception_curve,
                     run_curves, run_verify, unconstrained_curve)
from .source import SourceError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2, 3

COMMANDS = {
    "rd-curve": ("rd",),
    "rdp-curve": ("rdp",),
    "two-stage": ("two_stage",),
    "dal-sweep": ("dal",),
}


class ConfigError(Exception):
    pass


def _error(kind: str, message: str, **extra) -> None:
    doc = {"error": kind, "message": message}
    doc.update(extra)
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdplab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["verify", "plot-data"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="non-negative integer seed (overrides the config)")
        p.add_argument("--strict", action="store_true",
                       help="treat solver non-convergence as failure (exit 3)")
        if name == "verify":
            p.add_argument("--corrupt-coupling", action="store_true", help=argparse.SUPPRESS)
    return parser


def _prepare(args):
    try:
        cfg, base = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg = cfg.model_copy(update={"seed": args.seed})
        src = cfg.source.build(base)
    except ValidationError as exc:
        raise ConfigError(json.dumps(exc.errors(include_url=False, include_context=False),
                                     default=str)) from exc
    except (OSError, json.JSONDecodeError, SourceError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out or cfg.out or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return cfg, src, out


def _run(args) -> int:
    cfg, src, out = _prepare(args)
    strict = args.strict or cfg.fail_on_nonconvergence

    if args.command in COMMANDS:
        run_cfg = cfg
        if args.command == "two-stage":
            run_cfg = cfg.model_copy(update={"two_stage": cfg.two_stage.model_copy(update={"enabled": True})})
        if args.command == "dal-sweep":
            run_cfg = cfg.model_copy(update={"dal": cfg.dal.model_copy(update={"enabled": True})})
        cs = run_curves(src, run_cfg, out, COMMANDS[args.command])
        bad = cs.nonconverged()
        summary = {"command": args.command, "files": cs.files, "nonconverged_points": bad}
        print(json.dumps(summary, sort_keys=True))
        return EXIT_NONCONVERGED if strict and bad else EXIT_OK

    if args.command == "verify":
        report = run_verify(src, cfg, corrupt_coupling=args.corrupt_coupling)
        report.write(out / "verify.json")
        for c in report.checks:
            print(f"{c.name}: {'pass' if c.passed else 'fail'} "
                  f"(measured {c.measured!r}, threshold {c.threshold!r})")
        return EXIT_OK if report.passed else EXIT_VERIFY

    # plot-data
    unc = unconstrained_curve(src, cfg)
    perc = perception_curve(src, cfg)
    warnings = emit_plot_data(unc, perc, out / "plot_data.csv")
    doc = {"warnings": warnings}
    try:
        doc["gap"] = gap_to_dict(compare_halved(unc, perc))
    except ValueError as exc:
        doc["warnings"].append(f"gap not computed: {exc}")
    with open(out / "plot_gap.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(doc, sort_keys=True))
    bad = sum(not p.converged for c in (unc, perc) for p in c.points)
    return EXIT_NONCONVERGED if strict and bad else EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _error("io", str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
