"""Trade/quote pairing and single/multiple trade classification.

For a stock pair (i, j), every trade of j is bracketed by the last quote of
i strictly before it and the first quote of i at or after it. A quote with
the same millisecond as the trade counts as the following quote. Trades
that share their bracketing quote pair with another trade of j are
`multiple`, the others `single`. The pair weight w_ij is the fraction of
single trades among the paired trades.
"""

import logging
from collections.abc import Iterator, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import IncompatibleMatricesError, OrderingError
from .replay import QuoteEvent, QuoteSeries, ReplayResult, TradeEvent, TradeSeries

logger = logging.getLogger(__name__)


class TradeLabel(str, Enum):
    """Classification of a paired trade."""

    SINGLE = "single"
    MULTIPLE = "multiple"


@dataclass(frozen=True, slots=True)
class PairedTrade:
    """A trade of stock j with its bracketing quotes of stock i."""

    trade: TradeEvent
    prev_quote: QuoteEvent
    next_quote: QuoteEvent
    label: TradeLabel | None = None


@dataclass(frozen=True, eq=False)
class PairedTrades:
    """Index form of the pairing of trades of j with quotes of i.

    Attributes:
        quote_stock: Symbol i.
        trade_stock: Symbol j.
        trade_index: Positions of the paired trades in j's trade series.
        prev_index: Position of each trade's previous quote in i's series.
        next_index: Position of each trade's following quote in i's series.
        dropped: Trades of j without a quote of i on both sides.
    """

    quote_stock: str
    trade_stock: str
    trade_index: np.ndarray
    prev_index: np.ndarray
    next_index: np.ndarray
    dropped: int

    def __len__(self) -> int:
        return len(self.trade_index)

    @property
    def total(self) -> int:
        """Trades of j considered against i (paired plus dropped)."""
        return len(self.trade_index) + self.dropped

    def records(
        self, quotes: QuoteSeries, trades: TradeSeries, labels: np.ndarray | None = None
    ) -> Iterator[PairedTrade]:
        """Yields one PairedTrade per paired trade.

        Args:
            quotes: The quote series of i used for pairing.
            trades: The trade series of j used for pairing.
            labels: Optional boolean array, True for single trades.
        """
        quote_list = list(quotes)
        trade_list = list(trades)
        for k, (t, p, f) in enumerate(zip(self.trade_index, self.prev_index, self.next_index)):
            label = None
            if labels is not None:
                label = TradeLabel.SINGLE if labels[k] else TradeLabel.MULTIPLE
            yield PairedTrade(trade_list[t], quote_list[p], quote_list[f], label)


def _check_sorted(timestamps: np.ndarray, what: str) -> None:
    if len(timestamps) > 1 and np.any(np.diff(timestamps) < 0):
        raise OrderingError(f"{what} is not sorted by timestamp")


def pair_trades(quotes_i: QuoteSeries, trades_j: TradeSeries) -> PairedTrades:
    """Brackets every trade of j by the surrounding quotes of i.

    Both series are sorted, so a binary search of all trade times against
    the quote times is one merge of the two series.

    Args:
        quotes_i: Quote series of stock i.
        trades_j: Trade series of stock j.

    Returns:
        The pairing; trades lacking a quote before or after are dropped and
        counted.

    Raises:
        OrderingError: If either series is unsorted.
    """
    _check_sorted(quotes_i.timestamps, f"quotes of {quotes_i.stock}")
    _check_sorted(trades_j.timestamps, f"trades of {trades_j.stock}")

    next_index = np.searchsorted(quotes_i.timestamps, trades_j.timestamps, side="left")
    prev_index = next_index - 1
    valid = (prev_index >= 0) & (next_index < len(quotes_i))
    trade_index = np.flatnonzero(valid)
    return PairedTrades(
        quote_stock=quotes_i.stock,
        trade_stock=trades_j.stock,
        trade_index=trade_index,
        prev_index=prev_index[valid],
        next_index=next_index[valid],
        dropped=int(len(trades_j) - len(trade_index)),
    )


@dataclass(frozen=True, eq=False)
class LabeledPairs:
    """A pairing with its single/multiple labels.

    Attributes:
        paired: The underlying pairing.
        is_single: True for single trades, aligned with paired.trade_index.
    """

    paired: PairedTrades
    is_single: np.ndarray

    @property
    def single_count(self) -> int:
        return int(np.count_nonzero(self.is_single))

    @property
    def multiple_count(self) -> int:
        return int(len(self.is_single) - self.single_count)

    @property
    def dropped(self) -> int:
        return self.paired.dropped

    @property
    def weight(self) -> float | None:
        """w_ij = single / (single + multiple); None when nothing is paired."""
        if len(self.is_single) == 0:
            return None
        return self.single_count / len(self.is_single)

    def mask(self, single: bool) -> np.ndarray:
        """Boolean mask selecting single (True) or multiple (False) trades."""
        return self.is_single if single else ~self.is_single


def label_single_multiple(paired: PairedTrades) -> LabeledPairs:
    """Labels each paired trade as single or multiple.

    A trade is multiple iff another trade of j has the same previous and
    following quote of i.

    Args:
        paired: Output of pair_trades.

    Returns:
        The labels and, through `.weight`, the pair weight w_ij.
    """
    if len(paired) == 0:
        return LabeledPairs(paired, np.zeros(0, dtype=bool))
    keys = np.stack([paired.prev_index, paired.next_index], axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    is_single = counts[inverse.reshape(-1)] == 1
    is_single.setflags(write=False)
    return LabeledPairs(paired, is_single)


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Pair weights w_ij without their counts, as read back from a weights file.

    Attributes:
        symbols: Stock order of rows and columns.
        matrix: N×N weights, NaN where no trade was paired.
    """

    symbols: tuple[str, ...]
    matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class PairWeights:
    """Pair weight matrix W with the counts it was computed from.

    Attributes:
        symbols: Stock order of rows (i, quotes) and columns (j, trades).
        single_counts: N×N single trade counts.
        paired_counts: N×N paired trade counts (single + multiple).
        dropped_counts: N×N unbracketed trade counts.
    """

    symbols: tuple[str, ...]
    single_counts: np.ndarray
    paired_counts: np.ndarray
    dropped_counts: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """W with NaN where no trade was paired."""
        with np.errstate(invalid="ignore", divide="ignore"):
            w = self.single_counts / self.paired_counts
        return np.where(self.paired_counts > 0, w, np.nan)

    @property
    def mean_single_fraction(self) -> float:
        """Average of w_ij over the pairs where it is defined."""
        return float(np.nanmean(self.matrix))

    @classmethod
    def from_labels(
        cls, symbols: Sequence[str], labeled: Mapping[tuple[int, int], LabeledPairs]
    ) -> "PairWeights":
        n = len(symbols)
        single = np.zeros((n, n), dtype=np.int64)
        paired = np.zeros((n, n), dtype=np.int64)
        dropped = np.zeros((n, n), dtype=np.int64)
        for (i, j), pairs in labeled.items():
            single[i, j] = pairs.single_count
            paired[i, j] = len(pairs.is_single)
            dropped[i, j] = pairs.dropped
        return cls(tuple(symbols), single, paired, dropped)

    @classmethod
    def pool(cls, weights: Sequence["PairWeights"]) -> "PairWeights":
        """Combines per-day weights by summing their counts.

        Raises:
            IncompatibleMatricesError: If the days use different universes.
        """
        first = weights[0]
        for other in weights[1:]:
            if other.symbols != first.symbols:
                raise IncompatibleMatricesError("pair weights cover different universes")
        return cls(
            first.symbols,
            sum(w.single_counts for w in weights),
            sum(w.paired_counts for w in weights),
            sum(w.dropped_counts for w in weights),
        )


@dataclass(frozen=True, eq=False)
class Classification:
    """Labels for every ordered pair (i, j) plus the pooled weights."""

    symbols: tuple[str, ...]
    pairs: dict[tuple[int, int], LabeledPairs]
    weights: PairWeights


def classify_market(
    replays: Mapping[str, ReplayResult],
    symbols: Sequence[str],
    workers: int = 1,
) -> Classification:
    """Pairs and labels the trades of every stock against every stock.

    Each (i, j) pair is an independent task; results are assembled in index
    order.

    Args:
        replays: Replay output of one session, keyed by symbol.
        symbols: Universe in matrix order.
        workers: Maximum concurrent pair tasks.

    Returns:
        The labeled pairs and the weight matrix.
    """
    keys = [(i, j) for i in range(len(symbols)) for j in range(len(symbols))]

    def task(key: tuple[int, int]) -> LabeledPairs:
        i, j = key
        quotes = replays[symbols[i]].quotes
        trades = replays[symbols[j]].trades
        return label_single_multiple(pair_trades(quotes, trades))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, keys))
    else:
        results = [task(key) for key in keys]

    pairs = dict(zip(keys, results))
    weights = PairWeights.from_labels(symbols, pairs)
    logger.info(
        "Classified %d pairs, mean single fraction %.3f",
        len(keys),
        weights.mean_single_fraction if np.any(weights.paired_counts) else float("nan"),
    )
    return Classification(tuple(symbols), pairs, weights)
