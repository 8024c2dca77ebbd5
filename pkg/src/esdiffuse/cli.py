"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure,
3 selfcheck failure.  ``ESDIFFUSE_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_SELFCHECK = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = os.environ.get("ESDIFFUSE_LOG", "WARNING").strip().upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser():
    p = _Parser(prog="esdiffuse", description="Diffuse-interface two-phase flow simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", help="run a simulation from a config file")
    s.add_argument("--config", required=True, help="YAML run configuration")
    s.add_argument("--out", required=True, help="output directory")
    c = sub.add_parser("selfcheck", help="run the built-in verification suite")
    c.add_argument("--filter", default=None, help="only run checks whose name contains NAME")
    c.add_argument("--json", action="store_true", help="print a JSON report")
    e = sub.add_parser("eos", help="tabulate bulk thermodynamics at one state")
    e.add_argument("--config", required=True, help="YAML config providing the mixture")
    e.add_argument("--n", required=True, help='comma-separated molar densities, e.g. "7430.2,673.6" '
                                              '(mol/m3 unless a unit is given)')
    e.add_argument("--T", required=True, help="temperature (K unless a unit is given)")
    return p


def _cmd_simulate(args):
    from .config import ConfigError, parse_config
    from .driver import run_simulation

    try:
        cfg = parse_config(args.config)
        res = run_simulation(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if res.status != 0:
        print(f"solver failure: {res.message}", file=sys.stderr)
        return EXIT_SOLVER
    last = res.records[-1]
    print(f"completed {last.step} steps, S_total={last.S_total:.17g}, E_total={last.E_total:.17g}")
    return EXIT_OK


def _cmd_selfcheck(args):
    from .selfcheck import run_checks

    results = run_checks(args.filter)
    if not results:
        print(f"no checks match {args.filter!r}", file=sys.stderr)
        return EXIT_USAGE
    if args.json:
        print(json.dumps([{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results], indent=2))
    else:
        for r in results:
            print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFCHECK


def _cmd_eos(args):
    from .config import ConfigError, parse_config, parse_quantity
    from .driver import eos_table, format_eos_table
    from .thermo import ThermoDomainError

    try:
        cfg = parse_config(args.config)
        n = np.array([parse_quantity(v.strip(), "molar_density") for v in args.n.split(",")])
        T = parse_quantity(args.T.strip(), "temperature")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if n.size != cfg.mixture.M:
        print(f"error: --n has {n.size} values but the mixture has {cfg.mixture.M} components",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        rows = eos_table(cfg.mixture, n, T, cfg.scheme.theta)
    except ThermoDomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(format_eos_table(rows))
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handler = {"simulate": _cmd_simulate, "selfcheck": _cmd_selfcheck, "eos": _cmd_eos}[args.command]
    return handler(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
