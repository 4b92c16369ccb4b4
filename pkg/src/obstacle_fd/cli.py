"""Command-line driver for convergence tables.

Values come from built-in defaults, then an optional ``--config`` file,
then explicit flags.  Exit status is 0 when every row succeeded and 2 when
any march failed.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (config_from_mapping, parse_mesh, parse_window, read_config_file,
                          run_table)
from .problems import PROBLEMS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="obstacle-fd",
        description="Convergence tables for finite-difference obstacle problems.")
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--problem", choices=sorted(PROBLEMS))
    p.add_argument("--scheme", help="CN1, CN2, BDF1, BDF2 or BDF3")
    p.add_argument("--space-order", type=int, choices=(2, 4))
    p.add_argument("--mesh", type=parse_mesh, help='explicit pairs, e.g. "80:80,160:160"')
    p.add_argument("--base-J", type=int, help="coarsest J when --mesh is not given")
    p.add_argument("--base-N", type=int, help="coarsest N (default: base J)")
    p.add_argument("--doublings", type=int, help="number of refinements of (J, N)")
    p.add_argument("--bdf2-init", help="first step of BDF2: CN1 (default) or BDF1")
    p.add_argument("--ref-mode", choices=("exact", "self"),
                   help="closed-form solution or a fine-grid self reference")
    p.add_argument("--ref-J", type=int, help="reference mesh (J = N unless --ref-N)")
    p.add_argument("--ref-N", type=int)
    p.add_argument("--window", type=parse_window, help='evaluation window, e.g. "80,120"')
    p.add_argument("--spacing", type=float, help="spacing of the evaluation points")
    p.add_argument("--newton-tol", type=float, help="relative Newton residual tolerance")
    p.add_argument("--format", choices=("markdown", "csv"))
    p.add_argument("--out", help="write the table here instead of stdout")
    p.add_argument("--no-time", dest="timings", action="store_false", default=None,
                   help="leave the time column blank (byte-reproducible output)")
    return p


def config_from_args(args: argparse.Namespace):
    values = dict(read_config_file(args.config)) if args.config else {}
    for key, value in vars(args).items():
        if key != "config" and value is not None:
            values[key] = value
    return config_from_mapping(values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    table = run_table(config)
    text = table.render()
    if config.out:
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for row in table.rows:
        if row.failure is not None:
            print(f"J={row.J} N={row.N}: {row.failure}", file=sys.stderr)
    return 0 if table.ok else 2


if __name__ == "__main__":
    sys.exit(main())
