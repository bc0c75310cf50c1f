"""Generalized price and liquidity response matrices.

For quote quantity x of stock i (midpoint or spread) and trade quantity y
of stock j (sign, volume or signed volume), both standardized per stock
over the session,

    R[i, j] = mean over selected trades t of j of
              (x_i(following quote) - x_i(previous quote)) * y_j(t)

where the previous/following quotes are those found by the pairing in
`classify`. The selection is all paired trades, the single ones, or the
multiple ones; the weighted response interpolates the latter two with the
pair weights.
"""

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classify import Classification, LabeledPairs, PairWeights, WeightMatrix
from .constants import TradeSubset, XKind, YKind
from .exceptions import (
    AlignmentError,
    AnalysisError,
    DegenerateSeriesError,
    EmptyResultError,
    IncompatibleMatricesError,
)
from .replay import ReplayResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NormalizedSeries:
    """A standardized series with the moments it was standardized by."""

    values: np.ndarray
    source_mean: float
    source_std: float

    def __len__(self) -> int:
        return len(self.values)


def normalize(series) -> NormalizedSeries:
    """Standardizes a series: (z - mean) / std with the population std.

    Args:
        series: Real sequence of length >= 2.

    Returns:
        The standardized values with the source mean and std.

    Raises:
        DegenerateSeriesError: If the series is shorter than 2 or constant.
    """
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 1 or len(values) < 2:
        raise DegenerateSeriesError(f"need at least 2 values to normalize, got {values.size}")
    mean = float(np.mean(values))
    std = float(np.std(values))
    if std == 0.0 or not np.isfinite(std):
        raise DegenerateSeriesError("series is constant (std = 0)")
    return NormalizedSeries((values - mean) / std, mean, std)


def signed_volume(signs: NormalizedSeries, volumes: NormalizedSeries) -> np.ndarray:
    """Signed traded volume: elementwise product of standardized sign and volume.

    Raises:
        AlignmentError: If the series have different lengths.
    """
    if len(signs) != len(volumes):
        raise AlignmentError(
            f"sign series has {len(signs)} values, volume series {len(volumes)}"
        )
    return signs.values * volumes.values


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """N×N response matrix with observation counts.

    Attributes:
        symbols: Row (i, responding stock) and column (j, trading stock) order.
        values: Responses; NaN marks a missing entry (no qualifying trade).
        counts: Number of trades averaged per entry.
        x_kind: Midpoint or spread.
        y_kind: Sign, volume or signed volume.
        subset: Trades averaged over.
        metadata: Provenance (days averaged, fallback entries, imputations).
    """

    symbols: tuple[str, ...]
    values: np.ndarray
    counts: np.ndarray
    x_kind: XKind
    y_kind: YKind
    subset: TradeSubset
    metadata: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        """Identifier like 'm_sign_all'."""
        return f"{self.x_kind.value}_{self.y_kind.value}_{self.subset.value}"

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def size(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True, eq=False)
class ResponseInputs:
    """Standardized per-stock series and pair labels of one session.

    Attributes:
        symbols: Universe in matrix order.
        x: Per x kind, one standardized quote series per stock.
        y: Per y kind, one standardized trade series per stock.
        pairs: Labeled pairing per (i, j).
    """

    symbols: tuple[str, ...]
    x: dict[XKind, list[np.ndarray]]
    y: dict[YKind, list[np.ndarray]]
    pairs: Mapping[tuple[int, int], LabeledPairs]


def prepare_inputs(
    replays: Mapping[str, ReplayResult],
    classification: Classification,
    renormalize_signed_volume: bool = False,
) -> ResponseInputs:
    """Standardizes the session's quote and trade series per stock.

    Midpoints and spreads are standardized over the stock's own quote
    series, signs and volumes over its own trade series.

    Args:
        replays: Replay output of the session.
        classification: Pair labels of the same session.
        renormalize_signed_volume: Standardize the signed volume product
            again before use.

    Returns:
        Inputs for response_matrix.

    Raises:
        DegenerateSeriesError: Naming the stock whose series is degenerate.
    """
    x: dict[XKind, list[np.ndarray]] = {kind: [] for kind in XKind}
    y: dict[YKind, list[np.ndarray]] = {kind: [] for kind in YKind}
    for symbol in classification.symbols:
        result = replays[symbol]
        try:
            x[XKind.MIDPOINT].append(normalize(result.quotes.midpoint).values)
            x[XKind.SPREAD].append(normalize(result.quotes.spread).values)
            signs = normalize(result.trades.signs)
            volumes = normalize(result.trades.volumes)
        except DegenerateSeriesError as exc:
            raise DegenerateSeriesError(f"{symbol}: {exc}") from exc
        product = signed_volume(signs, volumes)
        if renormalize_signed_volume:
            product = normalize(product).values
        y[YKind.SIGN].append(signs.values)
        y[YKind.VOLUME].append(volumes.values)
        y[YKind.SIGNED_VOLUME].append(product)
    return ResponseInputs(classification.symbols, x, y, classification.pairs)


def _select(pairs: LabeledPairs, subset: TradeSubset) -> np.ndarray:
    if subset is TradeSubset.ALL:
        return np.ones(len(pairs.is_single), dtype=bool)
    if subset is TradeSubset.SINGLE:
        return pairs.mask(single=True)
    if subset is TradeSubset.MULTIPLE:
        return pairs.mask(single=False)
    raise AnalysisError("weighted responses are built with weighted_response()")


def response_matrix(
    inputs: ResponseInputs,
    x_kind: XKind,
    y_kind: YKind,
    subset: TradeSubset,
    workers: int = 1,
) -> ResponseMatrix:
    """Computes R_x for one y kind and trade subset over one session.

    Args:
        inputs: Output of prepare_inputs.
        x_kind: Midpoint or spread.
        y_kind: Sign, volume or signed volume.
        subset: all, single or multiple.
        workers: Maximum concurrent column (trading stock) tasks.

    Returns:
        The response matrix, NaN where no trade qualifies.

    Raises:
        EmptyResultError: If every entry is missing.
    """
    n = len(inputs.symbols)
    x_series = inputs.x[x_kind]
    y_series = inputs.y[y_kind]

    def column(j: int) -> tuple[np.ndarray, np.ndarray]:
        values = np.full(n, np.nan)
        counts = np.zeros(n, dtype=np.int64)
        y_j = y_series[j]
        for i in range(n):
            pairs = inputs.pairs[(i, j)]
            paired = pairs.paired
            selected = _select(pairs, subset)
            count = int(np.count_nonzero(selected))
            if count == 0:
                continue
            x_i = x_series[i]
            change = x_i[paired.next_index[selected]] - x_i[paired.prev_index[selected]]
            values[i] = float(np.mean(change * y_j[paired.trade_index[selected]]))
            counts[i] = count
        return values, counts

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            columns = list(pool.map(column, range(n)))
    else:
        columns = [column(j) for j in range(n)]

    values = np.column_stack([c[0] for c in columns]) if n else np.zeros((0, 0))
    counts = np.column_stack([c[1] for c in columns]) if n else np.zeros((0, 0), dtype=np.int64)
    if n == 0 or np.all(np.isnan(values)):
        raise EmptyResultError(
            f"no qualifying trades for {x_kind.value}/{y_kind.value}/{subset.value}"
        )
    logger.debug(
        "Response %s/%s/%s: %d missing entries",
        x_kind.value, y_kind.value, subset.value, int(np.isnan(values).sum()),
    )
    return ResponseMatrix(inputs.symbols, values, counts, x_kind, y_kind, subset)


def weighted_response(
    r_st: ResponseMatrix, r_mt: ResponseMatrix, weights: PairWeights | WeightMatrix
) -> ResponseMatrix:
    """Interpolates single- and multiple-trade responses with the pair weights.

    R_wt = w * R_st + (1 - w) * R_mt. Where only one of R_st, R_mt is
    present, that one is used with weight 1; the number of such entries is
    recorded as `fallback_entries` in the metadata.

    Raises:
        IncompatibleMatricesError: On kind, subset or universe mismatch.
    """
    if (r_st.x_kind, r_st.y_kind) != (r_mt.x_kind, r_mt.y_kind):
        raise IncompatibleMatricesError(
            f"cannot combine {r_st.name} with {r_mt.name}: kinds differ"
        )
    if r_st.subset is not TradeSubset.SINGLE or r_mt.subset is not TradeSubset.MULTIPLE:
        raise IncompatibleMatricesError(
            f"weighted response needs single and multiple subsets, got {r_st.name}, {r_mt.name}"
        )
    if r_st.symbols != r_mt.symbols or r_st.symbols != weights.symbols:
        raise IncompatibleMatricesError("responses and weights cover different universes")

    w = weights.matrix
    st_present = ~np.isnan(r_st.values)
    mt_present = ~np.isnan(r_mt.values)
    both = st_present & mt_present & ~np.isnan(w)

    values = np.full(r_st.values.shape, np.nan)
    values[both] = w[both] * r_st.values[both] + (1.0 - w[both]) * r_mt.values[both]
    only_st = st_present & ~both
    only_mt = mt_present & ~st_present
    values[only_st] = r_st.values[only_st]
    values[only_mt] = r_mt.values[only_mt]

    metadata = {"fallback_entries": int(only_st.sum() + only_mt.sum())}
    return ResponseMatrix(
        r_st.symbols,
        values,
        r_st.counts + r_mt.counts,
        r_st.x_kind,
        r_st.y_kind,
        TradeSubset.WEIGHTED,
        metadata,
    )


def average_days(matrices: Sequence[ResponseMatrix]) -> ResponseMatrix:
    """Averages per-day matrices with equal day weights.

    An entry is averaged over the days where it is present; counts add up.

    Raises:
        IncompatibleMatricesError: If the matrices differ in kind or universe.
    """
    first = matrices[0]
    for other in matrices[1:]:
        if other.name != first.name or other.symbols != first.symbols:
            raise IncompatibleMatricesError(f"cannot average {first.name} with {other.name}")
    if len(matrices) == 1:
        metadata = dict(first.metadata, days=1)
        return ResponseMatrix(
            first.symbols, first.values, first.counts,
            first.x_kind, first.y_kind, first.subset, metadata,
        )
    stack = np.stack([m.values for m in matrices])
    present = ~np.isnan(stack)
    days_present = present.sum(axis=0)
    total = np.where(present, stack, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(days_present > 0, total / days_present, np.nan)
    metadata = {"days": len(matrices)}
    if "fallback_entries" in first.metadata:
        metadata["fallback_entries"] = sum(m.metadata.get("fallback_entries", 0) for m in matrices)
    return ResponseMatrix(
        first.symbols,
        values,
        sum(m.counts for m in matrices),
        first.x_kind,
        first.y_kind,
        first.subset,
        metadata,
    )


def compute_responses(
    sessions: Sequence[ResponseInputs],
    weights: PairWeights,
    x_kinds: Sequence[XKind],
    y_kinds: Sequence[YKind],
    subsets: Sequence[TradeSubset],
    workers: int = 1,
) -> dict[tuple[XKind, YKind, TradeSubset], ResponseMatrix]:
    """Computes every requested response matrix, averaged over sessions.

    Weighted responses are built from the day-averaged single and multiple
    responses and the pooled weights.

    Args:
        sessions: One ResponseInputs per trading day.
        weights: Pair weights pooled over the days.
        x_kinds: Quote quantities.
        y_kinds: Trade quantities.
        subsets: Trade subsets, possibly including weighted.
        workers: Maximum concurrent column tasks per matrix.

    Returns:
        (x_kind, y_kind, subset) → day-averaged ResponseMatrix.
    """
    needed = {s for s in subsets if s is not TradeSubset.WEIGHTED}
    if TradeSubset.WEIGHTED in subsets:
        needed |= {TradeSubset.SINGLE, TradeSubset.MULTIPLE}

    computed: dict[tuple[XKind, YKind, TradeSubset], ResponseMatrix] = {}
    for x_kind in x_kinds:
        for y_kind in y_kinds:
            for subset in (s for s in TradeSubset if s in needed):
                daily = [
                    response_matrix(inputs, x_kind, y_kind, subset, workers)
                    for inputs in sessions
                ]
                computed[(x_kind, y_kind, subset)] = average_days(daily)
            if TradeSubset.WEIGHTED in subsets:
                computed[(x_kind, y_kind, TradeSubset.WEIGHTED)] = weighted_response(
                    computed[(x_kind, y_kind, TradeSubset.SINGLE)],
                    computed[(x_kind, y_kind, TradeSubset.MULTIPLE)],
                    weights,
                )
    return {key: computed[key] for key in computed if key[2] in subsets}
