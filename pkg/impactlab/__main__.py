"""Entry point for impactlab.

Parses the subcommands, configures logging and runs either a single
analysis step on files or the full pipeline.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts
from .app import ImpactLabApp
from .classify import classify_market
from .config import default_workers, load_market_config, validate_config
from .constants import (
    DEFAULT_BIN_RULE,
    DEFAULT_NULL_REPLICATES,
    DEFAULT_SEED,
    TOOL_NAME,
    VERSION,
    ExitCode,
    NullFamily,
    OverlapKind,
    TradeSubset,
    XKind,
    YKind,
)
from .events import read_events, write_events
from .exceptions import ConfigError, DataIntegrityError, ImpactLabError
from .linalg import decompose
from .output import OutputFormatter
from .overlap import (
    compare_to_null,
    comparison_frame,
    decompose_overlap,
    heatmap_triples,
    normalize_factors,
    overlap_matrix,
    overlaps_from_responses,
    run_null_replicates,
)
from .replay import SessionWindow, replay
from .response import prepare_inputs, response_matrix, weighted_response
from .statfit import density_table, fit_normal, fit_tls
from .synth import generate

logger = logging.getLogger(__name__)


def _common_options(
    seed_help: str = "Master seed, overrides any config seed",
) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="Enable verbose output for debugging")
    common.add_argument("--seed", type=int, default=None, help=seed_help)
    common.add_argument(
        "--workers",
        type=int,
        default=None,
        help="Maximum concurrent tasks (default: $IMPACTLAB_WORKERS or 4)",
    )
    return common


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """Parses command-line arguments.

    Args:
        argv: Argument list (defaults to sys.argv[1:]).

    Returns:
        Parsed arguments namespace.
    """
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Cross-impact response analysis of limit order book event streams.",
    )
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} v{VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("replay", parents=[common], help="Replay events into quotes and trades")
    p.add_argument("--events", type=Path, required=True, help="Event file (.csv text or .bin)")
    p.add_argument("--out-quotes", type=Path, required=True, help="Directory of the quote file")
    p.add_argument("--out-trades", type=Path, required=True, help="Directory of the trade file")
    p.add_argument("--window", default=None, help="Session window 't0:t1' in ms")
    p.add_argument("--prefix", default="day01", help="File name prefix of the outputs")

    p = sub.add_parser("classify", parents=[common], help="Single/multiple trade weights")
    _replay_inputs(p)
    p.add_argument("--out", type=Path, required=True, help="Weights CSV")

    p = sub.add_parser("respond", parents=[common], help="Compute one response matrix")
    _replay_inputs(p)
    p.add_argument("--weights", type=Path, required=True, help="Weights CSV written by 'classify'")
    p.add_argument("--x", choices=[k.value for k in XKind], default=XKind.MIDPOINT.value)
    p.add_argument("--y", choices=[k.value for k in YKind], default=YKind.SIGN.value)
    p.add_argument("--subset", choices=[s.value for s in TradeSubset], default="all")
    p.add_argument("--renormalize-signed-volume", action="store_true")
    p.add_argument("--out", type=Path, required=True, help="Matrix CSV (sidecar JSON beside it)")

    p = sub.add_parser("svd", parents=[common], help="Decompose a response matrix")
    p.add_argument("--in", dest="input", type=Path, required=True, help="Matrix CSV")
    p.add_argument("--out-u", type=Path, required=True, help="Left singular vectors CSV")
    p.add_argument("--out-s", type=Path, required=True, help="Singular values CSV")
    p.add_argument("--out-v", type=Path, required=True, help="Right singular vectors CSV")

    p = sub.add_parser("fit", parents=[common], help="Fit pooled singular-vector entries")
    p.add_argument("--in", dest="input", type=Path, required=True, help="Vector matrix CSV")
    p.add_argument("--dist", choices=["normal", "tls"], default="tls")
    p.add_argument("--out", type=Path, required=True, help="Parameter JSON")

    p = sub.add_parser("density", parents=[common], help="Export density comparison data")
    p.add_argument("--in", dest="input", type=Path, required=True, help="Vector matrix CSV")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--bins", default=DEFAULT_BIN_RULE, help="Bin rule name or bin count")

    p = sub.add_parser("overlap", parents=[common], help="Overlap of left singular vectors")
    p.add_argument("--um", type=Path, required=True, help="U of the midpoint response")
    p.add_argument("--us", type=Path, required=True, help="U of the spread response")
    p.add_argument("--kind", choices=[k.value for k in OverlapKind], default="ms")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--heatmap", type=Path, default=None, help="Also write (row, col, value)")

    p = sub.add_parser(
        "null",
        parents=[_common_options(f"Seed of the null replicates (default: {DEFAULT_SEED})")],
        help="Random null model of the overlaps",
    )
    p.add_argument("--rm", type=Path, required=True, help="Midpoint response CSV")
    p.add_argument("--rs", type=Path, required=True, help="Spread response CSV")
    p.add_argument("--replicates", type=int, default=DEFAULT_NULL_REPLICATES)
    p.add_argument("--family", choices=[f.value for f in NullFamily], default="gaussian")
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic session")
    p.add_argument("--config", type=Path, required=True, help="Market config file")
    p.add_argument("--out", type=Path, required=True, help="Event file (.bin for binary)")

    p = sub.add_parser("run", parents=[common], help="Run the full pipeline")
    p.add_argument("--config", type=Path, required=True, help="Pipeline config file")

    p = sub.add_parser("validate", parents=[common], help="Validate a pipeline config")
    p.add_argument("--config", type=Path, required=True, help="Pipeline config file")

    args = parser.parse_args(argv)
    if args.workers is not None and args.workers < 1:
        parser.error("--workers must be >= 1")
    if args.seed is not None and args.seed < 0:
        parser.error("--seed must be >= 0")
    return args


def _replay_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--quotes", type=Path, required=True, help="Quote directory of 'replay'")
    parser.add_argument("--trades", type=Path, required=True, help="Trade directory of 'replay'")
    parser.add_argument("--prefix", default="day01")
    parser.add_argument(
        "--universe", default=None, help="Comma separated symbols (default: all in the files)"
    )


def configure_logging(verbose: bool) -> None:
    """Configures the logging module.

    Args:
        verbose: When True, sets log level to DEBUG.
    """
    level = logging.DEBUG if verbose else logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
    )


def _workers(args: argparse.Namespace) -> int:
    return args.workers if args.workers is not None else default_workers()


def _universe(args: argparse.Namespace, default: tuple[str, ...] | None = None) -> tuple[str, ...]:
    if args.universe:
        return tuple(s.strip() for s in args.universe.split(",") if s.strip())
    if default is not None:
        return default
    return artifacts.replay_symbols(args.quotes, args.prefix, args.trades)


def _load_session(args: argparse.Namespace, symbols: tuple[str, ...]):
    replays = artifacts.read_replay(args.quotes, args.prefix, symbols, args.trades)
    return replays, classify_market(replays, symbols, _workers(args))


def cmd_replay(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    events = read_events(args.events)
    replays = replay(events, SessionWindow.parse(args.window), _workers(args))
    written = artifacts.write_replay(args.out_quotes, args.prefix, replays, args.out_trades)
    output.field("Events", len(events))
    output.field("Stocks", len(replays))
    output.result(f"wrote {', '.join(str(p) for p in written)}")
    return ExitCode.OK


def cmd_classify(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    symbols = _universe(args)
    _, classification = _load_session(args, symbols)
    weights = classification.weights
    artifacts.write_weights(args.out, weights)
    output.field("Stocks", len(symbols))
    if np.any(weights.paired_counts):
        output.field("Single", f"{weights.mean_single_fraction:.3f} mean fraction")
    output.result(f"weights written to {args.out}")
    return ExitCode.OK


def cmd_respond(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    weights = artifacts.read_weights(args.weights)
    symbols = _universe(args, default=weights.symbols)
    if symbols != weights.symbols:
        raise DataIntegrityError(
            f"{args.weights}: weight symbols do not match the universe {','.join(symbols)}"
        )
    replays, classification = _load_session(args, symbols)
    inputs = prepare_inputs(replays, classification, args.renormalize_signed_volume)
    x_kind, y_kind = XKind(args.x), YKind(args.y)
    subset = TradeSubset(args.subset)
    workers = _workers(args)
    if subset is TradeSubset.WEIGHTED:
        matrix = weighted_response(
            response_matrix(inputs, x_kind, y_kind, TradeSubset.SINGLE, workers),
            response_matrix(inputs, x_kind, y_kind, TradeSubset.MULTIPLE, workers),
            weights,
        )
    else:
        matrix = response_matrix(inputs, x_kind, y_kind, subset, workers)
    artifacts.write_response_file(args.out, matrix)
    output.field("Matrix", matrix.name)
    output.field("Missing", int(matrix.missing.sum()))
    output.result(f"{matrix.name} written to {args.out}")
    return ExitCode.OK


def cmd_svd(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    values, rows, _ = artifacts.read_matrix(args.input)
    decomposition = decompose(values)
    artifacts.write_svd_files(args.out_u, args.out_s, args.out_v, decomposition, rows)
    output.field("Size", decomposition.size)
    output.field("Imputed", decomposition.metadata["imputed"])
    output.field("Largest", f"{decomposition.s[0]:.6g}" if decomposition.size else "-")
    output.result(f"U, S and V written to {args.out_u.parent}")
    return ExitCode.OK


def _entries(path: Path) -> np.ndarray:
    values, _, _ = artifacts.read_matrix(path)
    entries = values.ravel()
    return entries[~np.isnan(entries)]


def cmd_fit(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    entries = _entries(args.input)
    if args.dist == "normal":
        params = dict(fit_normal(entries).to_dict(), n=int(entries.size))
    else:
        params = fit_tls(entries).to_dict()
    artifacts.write_json(params, args.out)
    for key in ("mu", "sigma", "beta"):
        if key in params:
            output.field(key, f"{params[key]:.6g}")
    output.result(f"parameters written to {args.out}")
    return ExitCode.OK


def cmd_density(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    bins = int(args.bins) if str(args.bins).isdigit() else args.bins
    table = density_table(_entries(args.input), bins)
    artifacts.write_frame(table, args.out)
    output.field("Bins", len(table))
    output.result(f"density data written to {args.out}")
    return ExitCode.OK


def cmd_overlap(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    kind = OverlapKind(args.kind)
    u_m, _, _ = artifacts.read_matrix(args.um)
    u_s, _, _ = artifacts.read_matrix(args.us)
    left, right = {
        OverlapKind.MM: (u_m, u_m),
        OverlapKind.SS: (u_s, u_s),
        OverlapKind.MS: (u_m, u_s),
    }[kind]
    c = overlap_matrix(normalize_factors(left), normalize_factors(right), kind)
    labels = artifacts.factor_labels(c.size)
    artifacts.write_matrix(args.out, c.values, labels, labels, "factor")
    if args.heatmap is not None:
        artifacts.write_frame(heatmap_triples(c), args.heatmap)
    output.field("Kind", kind.value)
    output.field("Size", c.size)
    output.result(f"overlap written to {args.out}")
    return ExitCode.OK


def cmd_null(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    if args.replicates < 1:
        raise ConfigError(["--replicates must be >= 1"])
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    family = NullFamily(args.family)
    r_m = artifacts.read_response_file(args.rm, XKind.MIDPOINT)
    r_s = artifacts.read_response_file(args.rs, XKind.SPREAD)
    empirical = overlaps_from_responses(r_m, r_s)
    replicates = run_null_replicates(r_m, r_s, seed, args.replicates, family, _workers(args))
    out = Path(args.out_dir)
    for kind in OverlapKind:
        first = replicates[0][kind]
        artifacts.write_frame(heatmap_triples(first), out / f"heatmap_{first.name}_rep0.csv")
    y_kind = r_m.y_kind
    rows = compare_to_null(
        {(kind, y_kind): decompose_overlap(c) for kind, c in empirical.items()},
        [{(kind, y_kind): decompose_overlap(c) for kind, c in rep.items()} for rep in replicates],
    )
    artifacts.write_frame(comparison_frame(rows), out / "comparison.csv")
    output.field("Replicates", args.replicates)
    output.field("Seed", seed)
    output.field("Structured", f"{sum(r.structured for r in rows)}/{len(rows)}")
    output.result(f"null comparison written to {out}")
    return ExitCode.OK


def cmd_synth(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    config = load_market_config(args.config, seed=args.seed)
    events = generate(config)
    write_events(args.out, events)
    output.field("Stocks", config.n_stocks)
    output.field("Events", len(events))
    output.field("Seed", config.seed)
    output.result(f"events written to {args.out}")
    return ExitCode.OK


def _pipeline_config(args: argparse.Namespace):
    config = validate_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    return config


def cmd_validate(args: argparse.Namespace, output: OutputFormatter) -> ExitCode:
    config = _pipeline_config(args)
    output.field("Events", len(config.events))
    output.field("Stocks", len(config.universe))
    output.field("Output", config.output_dir)
    output.verbose(config.serialize().rstrip())
    output.result("configuration is valid")
    return ExitCode.OK


COMMANDS = {
    "replay": cmd_replay,
    "classify": cmd_classify,
    "respond": cmd_respond,
    "svd": cmd_svd,
    "fit": cmd_fit,
    "density": cmd_density,
    "overlap": cmd_overlap,
    "null": cmd_null,
    "synth": cmd_synth,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> None:
    """CLI entry point for impactlab."""
    args = parse_args(argv)
    configure_logging(args.verbose)
    output = OutputFormatter(verbose=args.verbose)

    if args.command == "run":
        try:
            config = _pipeline_config(args)
        except ConfigError as exc:
            for message in exc.errors:
                output.error(message)
            sys.exit(ExitCode.CONFIG_ERROR)
        sys.exit(ImpactLabApp(config, verbose=args.verbose).run())

    output.header(args.command)
    try:
        exit_code = COMMANDS[args.command](args, output)
    except ConfigError as exc:
        for message in exc.errors:
            output.error(message)
        exit_code = ExitCode.CONFIG_ERROR
    except ImpactLabError as exc:
        output.error(str(exc))
        exit_code = ExitCode(exc.exit_code)
    except OSError as exc:
        output.error(f"{exc.filename}: {exc.strerror}")
        exit_code = ExitCode.CONFIG_ERROR
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
