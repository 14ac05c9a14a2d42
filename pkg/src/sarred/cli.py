"""Command line entry point: ``sarred <subcommand> [--config PATH] [--set k=v] [--out DIR]``."""

from __future__ import annotations

import argparse
import sys

from . import experiment
from .io import ConfigError, load_config

COMMANDS = ("simulate", "reconstruct", "sweep", "evaluate", "diagnose")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sarred", description="Array SAR sparse imaging experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run config (defaults apply for missing keys)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config entry, e.g. sweep.sr=[0.5]; repeatable")
        p.add_argument("--out", help="output directory (default: output.dir from the config)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for sweep cells")
        if name == "evaluate":
            p.add_argument("--ref", help="reference volume (default: OUT/scene.sarvol)")
            p.add_argument("volumes", nargs="*", help="volumes to score against the reference")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return 2
    out = args.out or cfg["output"]["dir"]
    cfg["output"]["dir"] = out
    if args.command == "simulate":
        return experiment.simulate(cfg, out)
    if args.command == "reconstruct":
        return experiment.reconstruct(cfg, out, args.jobs)
    if args.command == "sweep":
        return experiment.sweep(cfg, out, args.jobs)
    if args.command == "evaluate":
        return experiment.evaluate(cfg, out, args.ref, args.volumes)
    return experiment.diagnose(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
