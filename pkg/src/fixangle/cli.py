"""Command line entry point: ``fixangle run CONFIG`` and ``fixangle sweep CONFIG``.

Exit codes: 0 success, 1 configuration error, 2 certificate failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .config import family_listing, load_config
from .errors import FixAngleError
from .io import dumps_json

log = logging.getLogger("fixangle")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fixangle", description="Fixed-angle scattering experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--list-families", action="store_true", help="print metric and potential families and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")
    for name, help_ in (("run", "run one experiment"), ("sweep", "convergence table over resolutions")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="YAML experiment file")
        s.add_argument("--resolution", type=int, nargs="+", help="override grid.resolutions")
        s.add_argument("--seed", type=int, help="override seed")
        s.add_argument("--output", help="override output directory")
        s.add_argument("--validate-only", action="store_true", help="validate the config and exit")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list_families:
        sys.stdout.write(json.dumps(family_listing(), indent=2) + "\n")
        return 0
    if args.command is None:
        build_parser().print_usage(sys.stderr)
        return 1
    # imported late so --help and --list-families stay fast
    from .pipeline import run_experiment, run_sweep

    try:
        cfg = load_config(args.config, {"resolution": args.resolution, "seed": args.seed, "output": args.output})
        if args.validate_only:
            sys.stdout.write(dumps_json({"valid": True, "config": cfg.to_dict()}))
            return 0
        log.info("running %s (%s) into %s", args.command, cfg.kind, cfg.output)
        man = run_experiment(cfg) if args.command == "run" else run_sweep(cfg)
        sys.stdout.write(dumps_json({"status": man["status"], "output": cfg.output,
                                     "summary": man["summary"]}))
        return 0
    except FixAngleError as exc:
        sys.stderr.write(f"fixangle: {type(exc).__name__}: {exc}\n")
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
