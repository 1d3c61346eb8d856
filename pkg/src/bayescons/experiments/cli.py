"""Command-line entry point.

    bayescons simulate    --config cfg.json [--seed S] [--out DIR] [--format csv|json] [--workers K]
    bayescons summability --config cfg.json [...]
    bayescons martingale  --config cfg.json [...]
    bayescons divergence  --f uniform --g 2x [--metric hellinger-h|hellinger-H|kl|chi2]

Exit status: 0 on success, 2 for configuration or usage errors, 3 when a
numerical step fails.
"""

from __future__ import annotations

import argparse
import sys

from ..densities import chi_squared, hellinger_H, hellinger_h, kl_divergence
from ..martingale import TraceError
from ..posterior import PosteriorError
from .config import ConfigError, load_config, parse_density
from .runner import run, write_result

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

_METRICS = {
    "hellinger-h": lambda f, g: hellinger_h(f, g),
    "hellinger-H": lambda f, g: hellinger_H(f, g),
    # D(g, f) = int f log(f / g): f plays the truth
    "kl": lambda f, g: kl_divergence(f, g),
    "chi2": lambda f, g: chi_squared(f, g),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bayescons", description="Posterior consistency experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("simulate", "run the scenario named in the config"),
                        ("summability", "summability reports for the configured priors"),
                        ("martingale", "martingale diagnostics over replicates")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON config file")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", help="output directory (overrides output.dir)")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("--workers", type=int, default=1, help="processes for replicates")
    d = sub.add_parser("divergence", help="distance between two menu densities")
    d.add_argument("--f", required=True, help="first density, e.g. uniform")
    d.add_argument("--g", required=True, help="second density, e.g. 2x")
    d.add_argument("--metric", choices=tuple(_METRICS), default="hellinger-h")
    return p


def _divergence(args) -> int:
    f, g = parse_density(args.f), parse_density(args.g)
    print(f"{_METRICS[args.metric](f, g):.6f}")
    return EXIT_OK


def _scenario(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.command != "simulate" and config.scenario != args.command:
        raise ConfigError(f"scenario: the {args.command} command needs scenario {args.command!r}, "
                          f"got {config.scenario!r}")
    if args.workers < 1:
        raise ConfigError("workers: must be >= 1")
    result = run(config, workers=args.workers)
    out = args.out if args.out is not None else config.out_dir
    for path in write_result(result, out, args.format):
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        if args.command == "divergence":
            return _divergence(args)
        return _scenario(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, TraceError, PosteriorError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
