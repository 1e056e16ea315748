"""Command-line entry point: ``stochpile {stabilize,sweep,render,estimate}``.

Exit codes: 0 success, 1 I/O failure, 2 bad arguments or input,
3 counter overflow, 4 sweep finished with skipped cells, 5 unstable snapshot.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .core import (
    Configuration,
    OrderPolicy,
    StabilizationError,
    UnstableSiteError,
    stabilize,
)
from .distributions import GRAMMAR, DistributionError, GammaSpec
from .experiments import (
    DEFAULT_BASE_SEED,
    CsvSchemaError,
    SweepSpec,
    SweepSpecError,
    estimate_constants,
    read_csv,
    run_sweep,
    skipped_cells,
)
from .render import render_shape, write_ppm

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_OVERFLOW, EXIT_SKIPPED, EXIT_UNSTABLE = 0, 1, 2, 3, 4, 5

DEFAULT_SEED = DEFAULT_BASE_SEED
POLICIES = {"fifo": OrderPolicy.FIFO, "lifo": OrderPolicy.LIFO, "site-exhaust": OrderPolicy.SITE_EXHAUST}

log = logging.getLogger("stochpile")


class UsageError(Exception):
    pass


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _check_readable(path):
    if not Path(path).is_file() or not os.access(path, os.R_OK):
        raise FileNotFoundError(f"cannot read {path}")


def _check_writable(path):
    if path is None:
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise FileNotFoundError(f"cannot write into {parent}")


def _dump_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_stabilize(args) -> int:
    try:
        spec = GammaSpec.parse(args.dist, args.m)
    except DistributionError as exc:
        raise UsageError(str(exc)) from None
    _check_writable(args.out_config)
    _check_writable(args.out_json)
    result = stabilize(args.n, args.m, spec, args.seed, POLICIES[args.policy],
                       max_topplings=args.max_topplings)
    if args.out_config:
        result.final.write_snapshot(args.out_config)
    _dump_json(result.summary(), args.out_json)
    return EXIT_OK


def cmd_sweep(args) -> int:
    _check_readable(args.spec)
    try:
        spec = SweepSpec.load(args.spec)
    except SweepSpecError as exc:
        raise UsageError(f"malformed sweep spec, field {exc.field!r}: {exc}") from None
    if args.no_timing:
        spec.timing = False
    out = args.out or spec.output_path
    if out is None:
        raise UsageError("no output path: pass --out or set output_path in the sweep spec")
    _check_writable(out)
    skipped = skipped_cells(spec)
    run_sweep(spec, workers=args.parallelism, output_path=out)
    for sk in skipped:
        print(f"skipped cell {sk.index} ({sk.template}, M={sk.M}, N={sk.N}): {sk.reason}", file=sys.stderr)
    return EXIT_SKIPPED if skipped else EXIT_OK


def cmd_render(args) -> int:
    _check_readable(args.config)
    _check_writable(args.out)
    try:
        config = Configuration.read_snapshot(args.config)
    except ValueError as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    H, W = config.shape
    # render exactly the snapshot's window
    crop = (config.x0, config.y0, config.x0 + W - 1, config.y0 + H - 1)
    write_ppm(render_shape(config, crop), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    _check_readable(args.csv)
    _check_writable(args.out)
    try:
        rows = read_csv(args.csv)
    except CsvSchemaError as exc:
        raise UsageError(str(exc)) from None
    estimates = estimate_constants(rows)
    for est in estimates:
        if est.replicate_count < 2:
            print(f"warning: {est.distribution} M={est.M} has {est.replicate_count} replicate(s) "
                  f"at N={est.N_max}; halfwidth is infinite", file=sys.stderr)
    _dump_json([e.to_json_dict() for e in estimates], args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochpile",
        description="Single-source stochastic sandpile: stabilize, sweep, render, estimate.",
        epilog=f"distribution grammar: {GRAMMAR}",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("stabilize", formatter_class=fmt,
                       help="stabilize N grains at the origin and summarize",
                       epilog=f"distribution grammar: {GRAMMAR}")
    p.add_argument("--n", type=_positive, required=True, help="number of grains at the origin")
    p.add_argument("--m", type=_positive, required=True, help="multiplicity; sites topple at 4M grains")
    p.add_argument("--dist", required=True, help="toppling multiplicity law")
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED,
                   help="64-bit seed (decimal or 0x-hex)")
    p.add_argument("--policy", choices=sorted(POLICIES), default="site-exhaust",
                   help="order in which unstable sites are processed (result is identical)")
    p.add_argument("--max-topplings", type=_positive, default=2**63 - 1,
                   help="abort after this many topplings")
    p.add_argument("--out-config", default=None, help="write the final configuration snapshot here")
    p.add_argument("--out-json", default=None, help="write the JSON summary here (default stdout)")
    p.set_defaults(func=cmd_stabilize)

    p = sub.add_parser("sweep", formatter_class=fmt, help="run a JSON-described parameter sweep to CSV",
                       epilog=f"distribution templates: {GRAMMAR}, plus 'deterministic', 'always-1' "
                              "and bare 'binomial' (p from p_rule: none | fixed:p | power:alpha | scaled:a)")
    p.add_argument("--spec", required=True, help="sweep spec JSON path")
    p.add_argument("--out", default=None, help="CSV output path (overrides output_path in the sweep spec)")
    p.add_argument("--parallelism", type=_positive, default=os.cpu_count() or 1,
                   help="worker processes")
    p.add_argument("--no-timing", action="store_true",
                   help="write runtime_ms as 0 so the CSV is byte-reproducible")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", formatter_class=fmt, help="render a configuration snapshot to PPM")
    p.add_argument("--config", required=True, help="snapshot path (stochpile-config v1)")
    p.add_argument("--out", required=True, help="output .ppm path")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("estimate", formatter_class=fmt,
                       help="estimate radius/avalanche constants at the largest N of a sweep CSV")
    p.add_argument("--csv", required=True, help="sweep CSV path")
    p.add_argument("--out", default=None, help="JSON output path (default stdout)")
    p.set_defaults(func=cmd_estimate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stochpile {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnstableSiteError as exc:
        print(f"stochpile: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except StabilizationError as exc:
        print(f"stochpile: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    except OSError as exc:
        print(f"stochpile: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
