"""Seeded synthetic order-flow sessions with planted impact.

Every stock runs two independent Poisson clocks:

- trades: a market order of sign ε and volume v is emitted as a passive
  order added at the touch and executed in full, so the best quote does
  not move at the trade itself;
- requotes: both quotes are deleted and re-added around a new reference
  midpoint.

A trade of stock j adds g[i, j]·ε ticks to the pending midpoint shift of
every stock i (and h[i, j]·v/E[v] ticks to its pending spread widening).
The next requote of i moves the midpoint by the rounded pending shift plus
±1 tick of noise, so the planted impact shows up between the quotes that
bracket the trade. With independent Poisson clocks the fraction of trades
of j that own their bracketing quote pair of i is

    (λq_i / (λq_i + λt_j))²

which is what calibrate_single_fraction inverts.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .constants import (
    SYNTH_FULL_SINGLE_FRACTION,
    SYNTH_MAX_QUOTE_INTENSITY,
    SYNTH_QUEUE_VOLUME,
    SYNTH_SECTOR_STREAM,
    SYNTH_START_MID_TICKS,
    SYMBOL_MAX_LENGTH,
    EventKind,
    Side,
)
from .events import OrderEvent
from .exceptions import CalibrationError, ConfigError

logger = logging.getLogger(__name__)

_TRADE = 0
_REQUOTE = 1


def default_symbols(n_stocks: int) -> tuple[str, ...]:
    """Placeholder symbols S000, S001, ..."""
    return tuple(f"S{k:03d}" for k in range(n_stocks))


@dataclass(frozen=True, eq=False)
class MarketConfig:
    """Parameters of a synthetic session.

    Attributes:
        symbols: Stock symbols; their number is N.
        session_ms: Session length in milliseconds.
        impact: N×N midpoint shift in ticks per unit trade sign, g[i, j]
            for a trade of j acting on i.
        trade_intensity: Trades per second, one value per stock.
        quote_intensity: Requotes per second, one value per stock.
        volume_mu: Mean of log volume.
        volume_sigma: Std of log volume.
        sign_autocorrelation: Lag-1 autocorrelation of each trade sign series.
        spread_ticks: Minimum spread.
        spread_jitter: Extra spread drawn uniformly from 0..jitter per requote.
        spread_impact: N×N spread widening in ticks per trade of average volume.
        burst_size: Trades emitted per trade arrival, all in the same ms.
        single_fraction: Calibration target, None when not calibrating.
        seed: Master seed of the session.
    """

    symbols: tuple[str, ...]
    session_ms: int
    impact: np.ndarray
    trade_intensity: tuple[float, ...]
    quote_intensity: tuple[float, ...]
    volume_mu: float = 4.0
    volume_sigma: float = 1.0
    sign_autocorrelation: float = 0.0
    spread_ticks: int = 1
    spread_jitter: int = 2
    spread_impact: np.ndarray | None = None
    burst_size: int = 1
    single_fraction: float | None = None
    seed: int = 0

    @property
    def n_stocks(self) -> int:
        return len(self.symbols)

    @classmethod
    def build(
        cls,
        n_stocks: int,
        session_ms: int,
        self_impact: float = 0.0,
        cross_impact: float = 0.0,
        trade_intensity: float | Sequence[float] = 1.0,
        quote_intensity: float | Sequence[float] = 4.0,
        **kwargs,
    ) -> "MarketConfig":
        """Convenience constructor with a two-level impact matrix.

        Args:
            n_stocks: Number of stocks.
            session_ms: Session length in ms.
            self_impact: Diagonal of g.
            cross_impact: Off-diagonal entries of g.
            trade_intensity: Scalar or per-stock trades per second.
            quote_intensity: Scalar or per-stock requotes per second.
            **kwargs: Remaining MarketConfig fields.
        """
        symbols = kwargs.pop("symbols", None) or default_symbols(n_stocks)
        impact = np.full((n_stocks, n_stocks), float(cross_impact))
        np.fill_diagonal(impact, float(self_impact))
        return cls(
            symbols=tuple(symbols),
            session_ms=session_ms,
            impact=impact,
            trade_intensity=_per_stock(trade_intensity, n_stocks),
            quote_intensity=_per_stock(quote_intensity, n_stocks),
            **kwargs,
        )

    @classmethod
    def sectors(
        cls,
        sector_sizes: Sequence[int],
        session_ms: int,
        self_impact: float = 0.0,
        sector_impact: float = 0.0,
        spread_self_impact: float = 0.0,
        spread_sector_impact: float = 0.0,
        heterogeneity: float = 0.0,
        trade_intensity: float | Sequence[float] = 1.0,
        quote_intensity: float | Sequence[float] = 4.0,
        **kwargs,
    ) -> "MarketConfig":
        """Market whose stocks only move with trades of their own sector.

        Both impact matrices are block diagonal over consecutive sectors.
        The planted entries are drawn from the config seed, see
        sector_matrix.

        Args:
            sector_sizes: Number of stocks per sector; N is their sum.
            session_ms: Session length in ms.
            self_impact: Diagonal of g.
            sector_impact: Entries of g between two stocks of one sector.
            spread_self_impact: Diagonal of the spread impact.
            spread_sector_impact: Spread impact inside a sector.
            heterogeneity: Relative spread of the planted entries, in [0, 1).
            trade_intensity: Scalar or per-stock trades per second.
            quote_intensity: Scalar or per-stock requotes per second.
            **kwargs: Remaining MarketConfig fields.

        Raises:
            ConfigError: If the sector sizes or the heterogeneity are invalid.
        """
        n_stocks = sum(sector_sizes)
        symbols = kwargs.pop("symbols", None) or default_symbols(n_stocks)
        rng = sector_rng(kwargs.get("seed", 0))
        return cls(
            symbols=tuple(symbols),
            session_ms=session_ms,
            impact=sector_matrix(sector_sizes, self_impact, sector_impact, heterogeneity, rng),
            spread_impact=sector_matrix(
                sector_sizes, spread_self_impact, spread_sector_impact, heterogeneity, rng
            ),
            trade_intensity=_per_stock(trade_intensity, n_stocks),
            quote_intensity=_per_stock(quote_intensity, n_stocks),
            **kwargs,
        )


def sector_rng(seed: int) -> np.random.Generator:
    """Stream for planted sector entries, independent of the session streams."""
    return np.random.default_rng(np.random.SeedSequence([seed, SYNTH_SECTOR_STREAM]))


def sector_matrix(
    sector_sizes: Sequence[int],
    diagonal: float,
    within: float,
    heterogeneity: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Block-diagonal impact over consecutive sectors.

    Entry (i, j) is `diagonal` for i == j, `within` when i and j share a
    sector and 0 otherwise. With heterogeneity h > 0 every entry is scaled
    by its own uniform factor from [1 - h, 1 + h], which separates the
    singular values of different sectors.

    Raises:
        ConfigError: If a sector is empty or h lies outside [0, 1).
    """
    errors = []
    if not sector_sizes or any(size < 1 for size in sector_sizes):
        errors.append(f"sector sizes must be >= 1, got {list(sector_sizes)}")
    if not 0.0 <= heterogeneity < 1.0:
        errors.append(f"heterogeneity must lie in [0, 1), got {heterogeneity}")
    if heterogeneity > 0.0 and rng is None:
        errors.append("heterogeneous sectors need a random generator")
    if errors:
        raise ConfigError(errors)
    labels = np.repeat(np.arange(len(sector_sizes)), sector_sizes)
    matrix = np.where(labels[:, None] == labels[None, :], float(within), 0.0)
    np.fill_diagonal(matrix, float(diagonal))
    if heterogeneity > 0.0:
        matrix *= rng.uniform(1.0 - heterogeneity, 1.0 + heterogeneity, size=matrix.shape)
    return matrix


def _per_stock(value: float | Sequence[float], n: int) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * n
    return tuple(float(v) for v in value)


def validate_market_config(config: MarketConfig) -> list[str]:
    """Collects every problem with a market config (empty when valid)."""
    errors: list[str] = []
    n = config.n_stocks
    if n == 0:
        errors.append("at least one stock is required")
    if len(set(config.symbols)) != n:
        errors.append("symbols must be unique")
    for symbol in config.symbols:
        if not symbol or len(symbol) > SYMBOL_MAX_LENGTH or not symbol.isascii():
            errors.append(f"invalid symbol {symbol!r}")
    if config.session_ms <= 0:
        errors.append(f"session_ms must be > 0, got {config.session_ms}")
    if np.shape(config.impact) != (n, n):
        errors.append(f"impact must be {n}x{n}, got {np.shape(config.impact)}")
    elif not np.all(np.isfinite(config.impact)):
        errors.append("impact has non-finite entries")
    if config.spread_impact is not None:
        if np.shape(config.spread_impact) != (n, n):
            errors.append(f"spread_impact must be {n}x{n}")
        elif np.any(np.asarray(config.spread_impact) < 0):
            errors.append("spread_impact must be non-negative")
    for name in ("trade_intensity", "quote_intensity"):
        values = getattr(config, name)
        if len(values) != n:
            errors.append(f"{name} needs {n} values, got {len(values)}")
        elif any(not v > 0 for v in values):
            errors.append(f"{name} must be > 0 for every stock")
    if config.volume_sigma < 0:
        errors.append("volume_sigma must be >= 0")
    if not -1.0 < config.sign_autocorrelation < 1.0:
        errors.append("sign_autocorrelation must lie in (-1, 1)")
    if config.spread_ticks < 1:
        errors.append("spread_ticks must be >= 1")
    if config.spread_jitter < 0:
        errors.append("spread_jitter must be >= 0")
    if config.burst_size < 1:
        errors.append("burst_size must be >= 1")
    if config.single_fraction is not None and not 0.0 <= config.single_fraction <= 1.0:
        errors.append(f"single_fraction must lie in [0, 1], got {config.single_fraction}")
    if config.seed < 0:
        errors.append("seed must be a non-negative integer")
    return errors


def expected_single_fraction(config: MarketConfig) -> float:
    """Mean over all (i, j) of the predicted single-trade fraction."""
    if config.burst_size > 1:
        return 0.0
    quote = np.asarray(config.quote_intensity)[:, None]
    trade = np.asarray(config.trade_intensity)[None, :]
    return float(np.mean((quote / (quote + trade)) ** 2))


def calibrate_single_fraction(config: MarketConfig) -> MarketConfig:
    """Rescales the requote intensities to hit the single-trade fraction target.

    Requote intensities become c·λt_i with one global c. A target of 0 is
    reached by bursting trades instead; a target of 1 is approached as
    closely as the intensity cap allows.

    Raises:
        CalibrationError: If no target is set or the required requote
            intensity exceeds the cap.
    """
    target = config.single_fraction
    if target is None:
        raise CalibrationError("no single_fraction target to calibrate to")
    if target == 0.0:
        return replace(config, burst_size=max(config.burst_size, 2))
    aim = min(target, SYNTH_FULL_SINGLE_FRACTION)
    trade = np.asarray(config.trade_intensity, dtype=np.float64)

    def mismatch(log_c: float) -> float:
        quote = np.exp(log_c) * trade[:, None]
        return float(np.mean((quote / (quote + trade[None, :])) ** 2)) - aim

    log_c = optimize.brentq(mismatch, np.log(1e-9), np.log(1e9), xtol=1e-12)
    quote_intensity = np.exp(log_c) * trade
    if np.max(quote_intensity) > SYNTH_MAX_QUOTE_INTENSITY:
        raise CalibrationError(
            f"single fraction {target} needs {np.max(quote_intensity):.1f} requotes/s, "
            f"above the cap of {SYNTH_MAX_QUOTE_INTENSITY:.0f}; lower the trade intensity"
        )
    logger.info("Calibrated requote/trade intensity ratio %.4f for target %.3f", np.exp(log_c), aim)
    return replace(
        config,
        quote_intensity=tuple(float(q) for q in quote_intensity),
        burst_size=1,
    )


def _arrivals(rng: np.random.Generator, rate_per_s: float, session_ms: int) -> np.ndarray:
    count = rng.poisson(rate_per_s * session_ms / 1000.0)
    return np.sort(np.floor(rng.uniform(0.0, session_ms, size=count)).astype(np.int64))


def _sign_chain(rng: np.random.Generator, count: int, rho: float) -> np.ndarray:
    signs = np.empty(count, dtype=np.int64)
    if count == 0:
        return signs
    keep = rng.random(count) < (1.0 + rho) / 2.0
    signs[0] = 1 if rng.random() < 0.5 else -1
    for k in range(1, count):
        signs[k] = signs[k - 1] if keep[k] else -signs[k - 1]
    return signs


class _StockState:
    """Quote state of one synthetic stock."""

    def __init__(self, symbol: str) -> None:
        self.symbol = symbol
        self.mid = SYNTH_START_MID_TICKS
        self.spread = 1
        self.bid_id = 0
        self.ask_id = 0
        self.pending_mid = 0.0
        self.pending_spread = 0.0

    @property
    def bid(self) -> int:
        return self.mid - self.spread // 2

    @property
    def ask(self) -> int:
        return self.bid + self.spread


class _Emitter:
    def __init__(self) -> None:
        self.events: list[OrderEvent] = []
        self._next_id = 1

    def add(self, ts: int, stock: str, side: Side, price: int, volume: int) -> int:
        order_id = self._next_id
        self._next_id += 1
        self.events.append(OrderEvent(ts, stock, EventKind.ADD, side, price, volume, order_id))
        return order_id

    def remove(self, ts: int, stock: str, kind: EventKind, side: Side, price: int,
               volume: int, order_id: int) -> None:
        self.events.append(OrderEvent(ts, stock, kind, side, price, volume, order_id))


def generate(config: MarketConfig) -> list[OrderEvent]:
    """Generates one session of order-flow events.

    Args:
        config: A valid market config.

    Returns:
        Time-ordered events, replayable without integrity errors.

    Raises:
        ConfigError: If the config is infeasible.
    """
    errors = validate_market_config(config)
    if errors:
        raise ConfigError(errors)
    n = config.n_stocks
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3 * n + 1)]
    book_rng = streams[-1]
    impact = np.asarray(config.impact, dtype=np.float64)
    spread_impact = (
        np.zeros((n, n)) if config.spread_impact is None
        else np.asarray(config.spread_impact, dtype=np.float64)
    )
    mean_volume = float(np.exp(config.volume_mu + config.volume_sigma**2 / 2.0))

    timeline: list[tuple[int, int, int, int]] = []
    signs: list[np.ndarray] = []
    volumes: list[np.ndarray] = []
    for k in range(n):
        trade_rng, quote_rng, flow_rng = streams[3 * k], streams[3 * k + 1], streams[3 * k + 2]
        trade_times = np.repeat(
            _arrivals(trade_rng, config.trade_intensity[k], config.session_ms), config.burst_size
        )
        quote_times = _arrivals(quote_rng, config.quote_intensity[k], config.session_ms)
        signs.append(_sign_chain(flow_rng, len(trade_times), config.sign_autocorrelation))
        raw = flow_rng.lognormal(config.volume_mu, config.volume_sigma, size=len(trade_times))
        volumes.append(np.maximum(1, np.rint(raw)).astype(np.int64))
        timeline.extend((int(ts), _TRADE, k, seq) for seq, ts in enumerate(trade_times))
        timeline.extend((int(ts), _REQUOTE, k, seq) for seq, ts in enumerate(quote_times))
    timeline.sort()

    emitter = _Emitter()
    states = [_StockState(symbol) for symbol in config.symbols]
    for state in states:
        state.spread = config.spread_ticks + int(book_rng.integers(0, config.spread_jitter + 1))
        state.bid_id = emitter.add(0, state.symbol, Side.BID, state.bid, SYNTH_QUEUE_VOLUME)
        state.ask_id = emitter.add(0, state.symbol, Side.ASK, state.ask, SYNTH_QUEUE_VOLUME)

    for ts, kind, k, seq in timeline:
        state = states[k]
        if kind == _TRADE:
            sign = int(signs[k][seq])
            volume = int(volumes[k][seq])
            side, price = (Side.ASK, state.ask) if sign > 0 else (Side.BID, state.bid)
            order_id = emitter.add(ts, state.symbol, side, price, volume)
            emitter.remove(ts, state.symbol, EventKind.EXECUTE, side, price, volume, order_id)
            for target, other in enumerate(states):
                other.pending_mid += impact[target, k] * sign
                other.pending_spread += spread_impact[target, k] * volume / mean_volume
        else:
            _requote(emitter, state, ts, config, book_rng)

    logger.info(
        "Generated %d events for %d stocks over %d ms", len(emitter.events), n, config.session_ms
    )
    return emitter.events


def _requote(
    emitter: _Emitter, state: _StockState, ts: int, config: MarketConfig,
    rng: np.random.Generator,
) -> None:
    shift = int(np.rint(state.pending_mid))
    state.pending_mid -= shift
    noise = 1 if rng.random() < 0.5 else -1
    if shift + noise == 0:
        noise = -noise
    widen = int(np.floor(state.pending_spread))
    state.pending_spread -= widen

    emitter.remove(ts, state.symbol, EventKind.DELETE, Side.BID, state.bid, SYNTH_QUEUE_VOLUME,
                   state.bid_id)
    emitter.remove(ts, state.symbol, EventKind.DELETE, Side.ASK, state.ask, SYNTH_QUEUE_VOLUME,
                   state.ask_id)
    state.mid = max(state.mid + shift + noise, config.spread_ticks + config.spread_jitter + widen + 1)
    state.spread = config.spread_ticks + int(rng.integers(0, config.spread_jitter + 1)) + widen
    state.bid_id = emitter.add(ts, state.symbol, Side.BID, state.bid, SYNTH_QUEUE_VOLUME)
    state.ask_id = emitter.add(ts, state.symbol, Side.ASK, state.ask, SYNTH_QUEUE_VOLUME)
