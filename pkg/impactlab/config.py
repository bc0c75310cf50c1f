"""Plain-text key/value configuration files.

Format: one `key = value` per line, `#` starts a comment, blank lines are
ignored and list values are comma separated. The same reader serves the
pipeline config and the synthetic market config. Validation collects every
problem before failing so a user can fix a file in one pass.
"""

import logging
import os
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TypeVar

import numpy as np

from .constants import (
    DEFAULT_BIN_RULE,
    DEFAULT_NULL_REPLICATES,
    DEFAULT_SEED,
    DEFAULT_UNIVERSE,
    DEFAULT_WORKERS,
    TLS_MAX_ITERATIONS,
    WORKERS_ENV_VAR,
    NullFamily,
    TradeSubset,
    XKind,
    YKind,
)
from .exceptions import ConfigError
from .replay import SessionWindow
from .synth import (
    MarketConfig,
    calibrate_single_fraction,
    default_symbols,
    sector_matrix,
    sector_rng,
    validate_market_config,
)

logger = logging.getLogger(__name__)

E = TypeVar("E", bound=Enum)
T = TypeVar("T")

_NUMPY_BIN_RULES = {"auto", "fd", "doane", "scott", "stone", "rice", "sturges", "sqrt"}


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """Parses key/value text.

    Raises:
        ConfigError: Listing every malformed line and duplicate key.
    """
    values: dict[str, str] = {}
    errors: list[str] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            errors.append(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
            continue
        if key in values:
            errors.append(f"{source}:{number}: duplicate key '{key}'")
            continue
        values[key] = value.strip()
    if errors:
        raise ConfigError(errors)
    return values


def read_key_values(path: Path) -> dict[str, str]:
    """Reads a key/value file.

    Raises:
        ConfigError: If the file is unreadable or malformed.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from exc
    return parse_key_values(text, str(path))


def format_key_values(values: Mapping[str, str]) -> str:
    """Inverse of parse_key_values, keys in the given order."""
    return "".join(f"{key} = {value}\n" for key, value in values.items())


def _split_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


class _Reader:
    """Typed access to a key/value mapping that records problems instead of raising."""

    def __init__(self, values: Mapping[str, str], known: set[str]) -> None:
        self._values = values
        self.errors: list[str] = [
            f"unknown key '{key}'" for key in values if key not in known
        ]

    def has(self, key: str) -> bool:
        return key in self._values

    def get(self, key: str, convert: Callable[[str], T], default: T) -> T:
        if key not in self._values:
            return default
        try:
            return convert(self._values[key])
        except (ValueError, ConfigError) as exc:
            detail = "; ".join(exc.errors) if isinstance(exc, ConfigError) else str(exc)
            self.errors.append(f"{key}: {detail}")
            return default

    def enums(self, key: str, enum: type[E], default: tuple[E, ...]) -> tuple[E, ...]:
        items = self.get(key, _split_list, None)
        if items is None:
            return default
        if not items:
            self.errors.append(f"{key}: selection must not be empty")
            return default
        allowed = {member.value: member for member in enum}
        selected = []
        for item in items:
            if item not in allowed:
                self.errors.append(
                    f"{key}: unknown value '{item}' (choose from {', '.join(allowed)})"
                )
            elif allowed[item] not in selected:
                selected.append(allowed[item])
        return tuple(selected) or default


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_bin_rule(value: str) -> str | int:
    if value.isdigit():
        if int(value) < 1:
            raise ValueError("bin count must be >= 1")
        return int(value)
    if value not in _NUMPY_BIN_RULES:
        raise ValueError(f"unknown bin rule {value!r}")
    return value


def read_universe_file(path: Path) -> tuple[str, ...]:
    """Reads symbols separated by newlines or commas, `#` comments allowed."""
    text = Path(path).read_text(encoding="utf-8")
    symbols: list[str] = []
    for raw in text.splitlines():
        symbols.extend(_split_list(raw.split("#", 1)[0]))
    return tuple(symbols)


def default_workers() -> int:
    """Worker count from the environment, else the built-in default."""
    raw = os.environ.get(WORKERS_ENV_VAR)
    if raw is None or raw.strip() == "":
        return DEFAULT_WORKERS
    try:
        workers = int(raw)
    except ValueError:
        logger.warning("Ignoring %s=%r: not an integer", WORKERS_ENV_VAR, raw)
        return DEFAULT_WORKERS
    return max(1, workers)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one pipeline run depends on.

    Attributes:
        events: Event files, one per trading day.
        universe: Symbols in matrix order.
        universe_file: File the universe was read from, if any.
        window: Session window applied to every day.
        x_kinds: Quote quantities to respond with.
        y_kinds: Trade quantities to respond to.
        subsets: Trade subsets, weighted included.
        renormalize_signed_volume: Standardize the signed volume product again.
        bin_rule: Histogram bin rule of the density exports.
        tls_max_iterations: Optimizer cap of every t location-scale fit.
        overlap_subset: Subset whose responses feed the overlap stage.
        null_family: Distribution of null-model entries.
        null_replicates: Number of null replicates.
        output_dir: Root directory of the report bundle.
        seed: Master seed.
        workers: Bound on stage-internal concurrency.
    """

    events: tuple[Path, ...]
    universe: tuple[str, ...] = DEFAULT_UNIVERSE
    universe_file: Path | None = None
    window: SessionWindow = field(default_factory=SessionWindow)
    x_kinds: tuple[XKind, ...] = tuple(XKind)
    y_kinds: tuple[YKind, ...] = tuple(YKind)
    subsets: tuple[TradeSubset, ...] = tuple(TradeSubset)
    renormalize_signed_volume: bool = False
    bin_rule: str | int = DEFAULT_BIN_RULE
    tls_max_iterations: int = TLS_MAX_ITERATIONS
    overlap_subset: TradeSubset = TradeSubset.SINGLE
    null_family: NullFamily = NullFamily.GAUSSIAN
    null_replicates: int = DEFAULT_NULL_REPLICATES
    output_dir: Path = Path("report")
    seed: int = DEFAULT_SEED
    workers: int = DEFAULT_WORKERS

    def to_mapping(self) -> dict[str, str]:
        """Key/value form accepted back by parse_pipeline_config."""
        values = {"events": ", ".join(str(p) for p in self.events)}
        if self.universe_file is not None:
            values["universe_file"] = str(self.universe_file)
        else:
            values["universe"] = ", ".join(self.universe)
        if self.window != SessionWindow():
            values["window"] = str(self.window)
        values.update(
            {
                "x_kinds": ", ".join(k.value for k in self.x_kinds),
                "y_kinds": ", ".join(k.value for k in self.y_kinds),
                "subsets": ", ".join(s.value for s in self.subsets),
                "renormalize_signed_volume": str(self.renormalize_signed_volume).lower(),
                "bin_rule": str(self.bin_rule),
                "tls_max_iterations": str(self.tls_max_iterations),
                "overlap_subset": self.overlap_subset.value,
                "null_family": self.null_family.value,
                "null_replicates": str(self.null_replicates),
                "output_dir": str(self.output_dir),
                "seed": str(self.seed),
                "workers": str(self.workers),
            }
        )
        return values

    def serialize(self) -> str:
        return format_key_values(self.to_mapping())


PIPELINE_KEYS = {
    "events", "universe", "universe_file", "window", "x_kinds", "y_kinds", "subsets",
    "renormalize_signed_volume", "bin_rule", "tls_max_iterations", "overlap_subset",
    "null_family", "null_replicates", "output_dir", "seed", "workers",
}


def parse_pipeline_config(values: Mapping[str, str], base_dir: Path = Path(".")) -> PipelineConfig:
    """Builds a PipelineConfig from key/values, filling defaults.

    Relative paths are resolved against `base_dir`.

    Raises:
        ConfigError: Listing every problem found.
    """
    reader = _Reader(values, PIPELINE_KEYS)

    def resolve(text: str) -> Path:
        path = Path(text).expanduser()
        return path if path.is_absolute() else (base_dir / path).resolve()

    events: tuple[Path, ...] = ()
    if not reader.has("events"):
        reader.errors.append("events: at least one event file is required")
    else:
        events = tuple(resolve(p) for p in _split_list(values["events"]))
        if not events:
            reader.errors.append("events: at least one event file is required")
        for path in events:
            if not path.is_file():
                reader.errors.append(f"events: file not found: {path}")

    universe = DEFAULT_UNIVERSE
    universe_file = None
    if reader.has("universe") and reader.has("universe_file"):
        reader.errors.append("universe and universe_file are mutually exclusive")
    elif reader.has("universe_file"):
        universe_file = resolve(values["universe_file"])
        if not universe_file.is_file():
            reader.errors.append(f"universe_file: file not found: {universe_file}")
        else:
            universe = read_universe_file(universe_file)
    elif reader.has("universe"):
        universe = tuple(_split_list(values["universe"]))
    if not universe:
        reader.errors.append("universe: selection must not be empty")
    elif len(set(universe)) != len(universe):
        reader.errors.append("universe: symbols must be unique")

    window = reader.get("window", SessionWindow.parse, SessionWindow())
    x_kinds = reader.enums("x_kinds", XKind, tuple(XKind))
    y_kinds = reader.enums("y_kinds", YKind, tuple(YKind))
    subsets = reader.enums("subsets", TradeSubset, tuple(TradeSubset))
    renormalize = reader.get("renormalize_signed_volume", _parse_bool, False)
    bin_rule = reader.get("bin_rule", _parse_bin_rule, DEFAULT_BIN_RULE)
    tls_max_iterations = reader.get("tls_max_iterations", int, TLS_MAX_ITERATIONS)
    if tls_max_iterations < 1:
        reader.errors.append("tls_max_iterations must be >= 1")
    overlap_subset = reader.enums("overlap_subset", TradeSubset, (TradeSubset.SINGLE,))
    if len(overlap_subset) != 1:
        reader.errors.append("overlap_subset takes exactly one subset")
    elif overlap_subset[0] not in subsets:
        reader.errors.append(f"overlap_subset '{overlap_subset[0].value}' is not among subsets")
    null_family = reader.enums("null_family", NullFamily, (NullFamily.GAUSSIAN,))
    if len(null_family) != 1:
        reader.errors.append("null_family takes exactly one family")
    null_replicates = reader.get("null_replicates", int, DEFAULT_NULL_REPLICATES)
    if null_replicates < 1:
        reader.errors.append("null_replicates must be >= 1")
    output_dir = reader.get("output_dir", resolve, resolve("report"))
    seed = reader.get("seed", int, DEFAULT_SEED)
    if seed < 0:
        reader.errors.append("seed must be a non-negative integer")
    workers = reader.get("workers", int, default_workers())
    if workers < 1:
        reader.errors.append("workers must be >= 1")

    if reader.errors:
        raise ConfigError(reader.errors)
    return PipelineConfig(
        events=events,
        universe=universe,
        universe_file=universe_file,
        window=window,
        x_kinds=x_kinds,
        y_kinds=y_kinds,
        subsets=subsets,
        renormalize_signed_volume=renormalize,
        bin_rule=bin_rule,
        tls_max_iterations=tls_max_iterations,
        overlap_subset=overlap_subset[0],
        null_family=null_family[0],
        null_replicates=null_replicates,
        output_dir=output_dir,
        seed=seed,
        workers=workers,
    )


def validate_config(path: Path) -> PipelineConfig:
    """Reads and validates a pipeline config file.

    Relative paths in the file are relative to the file's directory.

    Raises:
        ConfigError: With every problem found, not only the first.
    """
    path = Path(path)
    config = parse_pipeline_config(read_key_values(path), path.parent)
    logger.debug("Validated config %s: %d event files", path, len(config.events))
    return config


MARKET_KEYS = {
    "symbols", "n_stocks", "session_ms", "self_impact", "cross_impact",
    "spread_self_impact", "spread_cross_impact", "trade_intensity", "quote_intensity",
    "volume_mu", "volume_sigma", "sign_autocorrelation", "spread_ticks", "spread_jitter",
    "burst_size", "single_fraction", "calibrate", "seed", "sectors", "impact_heterogeneity",
}


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in _split_list(value))


def _two_level(n: int, diagonal: float, off_diagonal: float) -> np.ndarray:
    matrix = np.full((n, n), off_diagonal)
    np.fill_diagonal(matrix, diagonal)
    return matrix


def parse_market_config(values: Mapping[str, str]) -> tuple[MarketConfig, bool]:
    """Builds a MarketConfig from key/values.

    Returns:
        The config and whether calibration was requested.

    Raises:
        ConfigError: Listing every problem found.
    """
    reader = _Reader(values, MARKET_KEYS)
    symbols: tuple[str, ...] = reader.get("symbols", lambda v: tuple(_split_list(v)), ())
    sectors = reader.get("sectors", lambda v: tuple(int(s) for s in _split_list(v)), ())
    n_stocks = reader.get("n_stocks", int, len(symbols) or sum(sectors) or 8)
    if symbols and reader.has("n_stocks") and n_stocks != len(symbols):
        reader.errors.append(f"n_stocks {n_stocks} does not match {len(symbols)} symbols")
    if not symbols:
        symbols = default_symbols(max(n_stocks, 0))
    n = len(symbols)

    def per_stock(key: str, default: float) -> tuple[float, ...]:
        parsed = reader.get(key, _floats, (default,))
        return parsed * n if len(parsed) == 1 else parsed

    single_fraction = reader.get("single_fraction", float, None)
    calibrate = reader.get("calibrate", _parse_bool, False)
    if calibrate and single_fraction is None:
        reader.errors.append("calibrate = true needs single_fraction")
    seed = reader.get("seed", int, DEFAULT_SEED)
    levels = {
        key: reader.get(key, float, 0.0)
        for key in ("self_impact", "cross_impact", "spread_self_impact", "spread_cross_impact")
    }
    heterogeneity = reader.get("impact_heterogeneity", float, 0.0)
    if sectors and sum(sectors) != n:
        reader.errors.append(f"sectors cover {sum(sectors)} stocks, the market has {n}")
        sectors = ()
    if heterogeneity and not sectors:
        reader.errors.append("impact_heterogeneity needs sectors")
    if sectors:
        # cross impact acts inside a sector only
        rng = sector_rng(max(seed, 0))
        try:
            impact = sector_matrix(
                sectors, levels["self_impact"], levels["cross_impact"], heterogeneity, rng
            )
            spread_impact = sector_matrix(
                sectors, levels["spread_self_impact"], levels["spread_cross_impact"],
                heterogeneity, rng,
            )
        except ConfigError as exc:
            reader.errors.extend(exc.errors)
            sectors = ()
    if not sectors:
        impact = _two_level(n, levels["self_impact"], levels["cross_impact"])
        spread_impact = _two_level(n, levels["spread_self_impact"], levels["spread_cross_impact"])
    config = MarketConfig(
        symbols=symbols,
        session_ms=reader.get("session_ms", int, 60_000),
        impact=impact,
        trade_intensity=per_stock("trade_intensity", 1.0),
        quote_intensity=per_stock("quote_intensity", 4.0),
        volume_mu=reader.get("volume_mu", float, 4.0),
        volume_sigma=reader.get("volume_sigma", float, 1.0),
        sign_autocorrelation=reader.get("sign_autocorrelation", float, 0.0),
        spread_ticks=reader.get("spread_ticks", int, 1),
        spread_jitter=reader.get("spread_jitter", int, 2),
        spread_impact=spread_impact,
        burst_size=reader.get("burst_size", int, 1),
        single_fraction=single_fraction,
        seed=seed,
    )
    errors = reader.errors + validate_market_config(config)
    if errors:
        raise ConfigError(errors)
    return config, calibrate


def load_market_config(path: Path, seed: int | None = None) -> MarketConfig:
    """Reads a market config file, calibrating it when the file asks to.

    Args:
        path: Key/value file.
        seed: Overrides the file's seed, planted sector entries included.

    Raises:
        ConfigError: If the file is invalid.
        CalibrationError: If the requested calibration is infeasible.
    """
    values = read_key_values(Path(path))
    if seed is not None:
        values["seed"] = str(seed)
    config, calibrate = parse_market_config(values)
    if calibrate:
        config = calibrate_single_fraction(config)
    return config
