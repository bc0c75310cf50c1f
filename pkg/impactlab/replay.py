"""Replay of order-flow events into best-quote and trade series.

Each stock's events are replayed sequentially through its own
OrderBookState. A quote is emitted whenever the two-sided best quote
changes; a trade is emitted per execute, signed by the side of the resting
order (+1 when a resting ask is hit, i.e. buyer-initiated, -1 when a
resting bid is hit).
"""

import logging
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .book import OrderBookState, apply_event
from .constants import EventKind, Side
from .events import OrderEvent
from .exceptions import ConfigError, OrderingError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class QuoteEvent:
    """A change of the best quote of one stock.

    The midpoint is carried exactly as `mid2 = bid + ask` (twice the
    midpoint in ticks) so half-tick midpoints need no floating point.
    """

    timestamp: int
    stock: str
    best_bid: int
    best_ask: int

    @property
    def mid2(self) -> int:
        return self.best_bid + self.best_ask

    @property
    def midpoint(self) -> float:
        return self.mid2 / 2

    @property
    def spread(self) -> int:
        return self.best_ask - self.best_bid


@dataclass(frozen=True, slots=True)
class TradeEvent:
    """An execution against a resting order."""

    timestamp: int
    stock: str
    sign: int
    volume: int
    price: int


def _frozen(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class QuoteSeries:
    """Time-ordered best quotes of one stock, stored column-wise."""

    stock: str
    timestamps: np.ndarray
    best_bid: np.ndarray
    best_ask: np.ndarray

    @classmethod
    def from_events(cls, stock: str, quotes: Sequence[QuoteEvent]) -> "QuoteSeries":
        return cls(
            stock=stock,
            timestamps=_frozen([q.timestamp for q in quotes], np.int64),
            best_bid=_frozen([q.best_bid for q in quotes], np.int64),
            best_ask=_frozen([q.best_ask for q in quotes], np.int64),
        )

    @classmethod
    def from_arrays(cls, stock: str, timestamps, best_bid, best_ask) -> "QuoteSeries":
        return cls(
            stock=stock,
            timestamps=_frozen(timestamps, np.int64),
            best_bid=_frozen(best_bid, np.int64),
            best_ask=_frozen(best_ask, np.int64),
        )

    @property
    def mid2(self) -> np.ndarray:
        return self.best_bid + self.best_ask

    @property
    def midpoint(self) -> np.ndarray:
        return self.mid2 / 2.0

    @property
    def spread(self) -> np.ndarray:
        return self.best_ask - self.best_bid

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[QuoteEvent]:
        for ts, bid, ask in zip(self.timestamps, self.best_bid, self.best_ask):
            yield QuoteEvent(int(ts), self.stock, int(bid), int(ask))

    def window(self, start: int | None, end: int | None) -> "QuoteSeries":
        mask = _window_mask(self.timestamps, start, end)
        return QuoteSeries.from_arrays(
            self.stock, self.timestamps[mask], self.best_bid[mask], self.best_ask[mask]
        )


@dataclass(frozen=True, eq=False)
class TradeSeries:
    """Time-ordered trades of one stock, stored column-wise."""

    stock: str
    timestamps: np.ndarray
    signs: np.ndarray
    volumes: np.ndarray
    prices: np.ndarray

    @classmethod
    def from_events(cls, stock: str, trades: Sequence[TradeEvent]) -> "TradeSeries":
        return cls.from_arrays(
            stock,
            [t.timestamp for t in trades],
            [t.sign for t in trades],
            [t.volume for t in trades],
            [t.price for t in trades],
        )

    @classmethod
    def from_arrays(cls, stock: str, timestamps, signs, volumes, prices) -> "TradeSeries":
        return cls(
            stock=stock,
            timestamps=_frozen(timestamps, np.int64),
            signs=_frozen(signs, np.int8),
            volumes=_frozen(volumes, np.int64),
            prices=_frozen(prices, np.int64),
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[TradeEvent]:
        for ts, sign, volume, price in zip(self.timestamps, self.signs, self.volumes, self.prices):
            yield TradeEvent(int(ts), self.stock, int(sign), int(volume), int(price))

    def window(self, start: int | None, end: int | None) -> "TradeSeries":
        mask = _window_mask(self.timestamps, start, end)
        return TradeSeries.from_arrays(
            self.stock,
            self.timestamps[mask],
            self.signs[mask],
            self.volumes[mask],
            self.prices[mask],
        )


@dataclass(frozen=True, eq=False)
class ReplayResult:
    """Quote and trade series of one stock."""

    quotes: QuoteSeries
    trades: TradeSeries


@dataclass(frozen=True)
class SessionWindow:
    """Half-open [start, end) filter in ms applied to emitted series."""

    start: int | None = None
    end: int | None = None

    @classmethod
    def parse(cls, text: str | None) -> "SessionWindow":
        """Parses 't0:t1' (either bound may be empty).

        Raises:
            ConfigError: If the text is not of that form or t0 >= t1.
        """
        if text is None or text.strip() == "":
            return cls()
        parts = text.split(":")
        if len(parts) != 2:
            raise ConfigError([f"window must be 't0:t1', got {text!r}"])
        try:
            start = int(parts[0]) if parts[0].strip() else None
            end = int(parts[1]) if parts[1].strip() else None
        except ValueError as exc:
            raise ConfigError([f"window bounds must be integers, got {text!r}"]) from exc
        if start is not None and end is not None and start >= end:
            raise ConfigError([f"window start {start} must be before end {end}"])
        return cls(start, end)

    def __str__(self) -> str:
        start = "" if self.start is None else str(self.start)
        end = "" if self.end is None else str(self.end)
        return f"{start}:{end}"


def _window_mask(timestamps: np.ndarray, start: int | None, end: int | None) -> np.ndarray:
    mask = np.ones(len(timestamps), dtype=bool)
    if start is not None:
        mask &= timestamps >= start
    if end is not None:
        mask &= timestamps < end
    return mask


def replay_stock(stock: str, events: Sequence[OrderEvent]) -> ReplayResult:
    """Replays the events of a single stock.

    Args:
        stock: Symbol; every event must belong to it.
        events: The stock's events in time order.

    Returns:
        Its quote and trade series.

    Raises:
        OrderingError: If timestamps decrease.
        DataIntegrityError: Propagated from the book.
    """
    book = OrderBookState(stock)
    quotes: list[QuoteEvent] = []
    trades: list[TradeEvent] = []
    last_quote: tuple[int, int] | None = None
    last_ts = -1

    for event in events:
        if event.timestamp < last_ts:
            raise OrderingError(f"{stock}: timestamp {event.timestamp} precedes {last_ts}")
        last_ts = event.timestamp
        if event.kind is EventKind.EXECUTE:
            resting = book.order(event.order_id)
            apply_event(book, event)
            sign = 1 if resting.side is Side.ASK else -1
            trades.append(TradeEvent(event.timestamp, stock, sign, event.volume, resting.price))
        else:
            apply_event(book, event)

        bid, ask = book.best_bid, book.best_ask
        if bid is not None and ask is not None and (bid, ask) != last_quote:
            quotes.append(QuoteEvent(event.timestamp, stock, bid, ask))
            last_quote = (bid, ask)

    logger.debug("%s: %d quotes, %d trades", stock, len(quotes), len(trades))
    return ReplayResult(QuoteSeries.from_events(stock, quotes), TradeSeries.from_events(stock, trades))


def replay(
    events: Sequence[OrderEvent],
    window: SessionWindow | None = None,
    workers: int = 1,
) -> dict[str, ReplayResult]:
    """Replays a multi-stock event stream.

    Stocks are independent: each is replayed sequentially on its own book,
    distinct stocks may run on separate workers.

    Args:
        events: Parsed events of one session.
        window: Optional [start, end) filter applied to the emitted series;
            the book itself is always replayed over the full input.
        workers: Maximum number of stocks replayed concurrently.

    Returns:
        Symbol → ReplayResult, symbols in sorted order.
    """
    by_stock: dict[str, list[OrderEvent]] = {}
    for event in events:
        by_stock.setdefault(event.stock, []).append(event)
    symbols = sorted(by_stock)

    if workers > 1 and len(symbols) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: replay_stock(s, by_stock[s]), symbols))
    else:
        results = [replay_stock(s, by_stock[s]) for s in symbols]

    window = window or SessionWindow()
    output: dict[str, ReplayResult] = {}
    for symbol, result in zip(symbols, results):
        output[symbol] = ReplayResult(
            result.quotes.window(window.start, window.end),
            result.trades.window(window.start, window.end),
        )
    logger.info("Replayed %d events for %d stocks", len(events), len(symbols))
    return output
