"""Command-line driver.

    starris convergence --config scenario.yaml --out results/
    starris re-vs-m --trials 10 --schemes proposed,zf
    starris se-ee --seed 7
    starris solve --verbose

Command-line values override the ``experiment`` section of the config file.
Exit status: 0 on success, 2 for an invalid configuration, 3 when every
trial failed.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import TOL_ENV, ConfigError, load_config, parse_config
from .experiments import RUNNERS, emit

log = logging.getLogger("starris")

COMMANDS = {
    "convergence": "convergence",
    "re-vs-m": "re_vs_m",
    "se-ee": "se_ee_tradeoff",
    "solve": "single_solve",
}

HELP = {
    "convergence": "RE per outer iteration for each BS antenna count",
    "re-vs-m": "mean RE versus the number of STAR-RIS elements, all schemes",
    "se-ee": "SE-EE region obtained by sweeping the SE weight at each BS budget",
    "solve": "a single solve of the configured scenario",
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _schemes(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starris",
        description="Resource-efficiency experiments for active STAR-RIS downlinks with hardware impairments.",
        epilog=f"Set {TOL_ENV} to override the conic solver tolerance.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", metavar="PATH", help="scenario YAML file (defaults apply when omitted)")
        p.add_argument("--seed", type=_u64, metavar="U64", help="master seed")
        p.add_argument("--trials", type=_positive, metavar="N", help="Monte-Carlo trials per point")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--schemes", type=_schemes, metavar="LIST", help="comma-separated scheme names")
        p.add_argument("--workers", type=_positive, metavar="N", help="worker processes")
        p.add_argument("--no-plots", action="store_true", help="skip the SVG plot")
        p.add_argument("--verbose", action="store_true", help="per-iteration solver log")
    return parser


def resolve(args: argparse.Namespace):
    """Load the config and apply the command-line overrides."""
    scenario = load_config(args.config)
    data = scenario.file.model_dump(mode="json")
    exp = data["experiment"]
    exp["id"] = COMMANDS[args.command]
    for field in ("seed", "trials", "out", "schemes", "workers"):
        value = getattr(args, field)
        if value is not None:
            exp[field] = value
    scenario = parse_config(data)
    scenario.options(0)  # surfaces a malformed tolerance override before any trial runs
    return scenario


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        scenario = resolve(args)
    except ConfigError as exc:
        print(f"starris: {exc}", file=sys.stderr)
        return 2
    spec = scenario.experiment

    def progress(done, total, outcome):
        state = "ok" if outcome.ok else f"failed ({outcome.error})"
        log.info("[%d/%d] %s seed=%d %s RE=%.6g (%.1f s)", done, total, "/".join(map(str, outcome.key)),
                 outcome.seed, state, outcome.re, outcome.wall_time)

    result = RUNNERS[spec.id](scenario, spec.schemes, args.verbose, progress)
    paths = emit(result, scenario, spec.out, plots=not args.no_plots)
    for path in paths:
        print(path)
    if result.failures:
        log.warning("%d of %d trials failed", result.failures, len(result.outcomes))
    return 3 if result.failures == len(result.outcomes) else 0


if __name__ == "__main__":
    sys.exit(main())
