"""Tests for trade pairing and single/multiple labels."""

import numpy as np
import pandas as pd
import pytest

from impactlab.classify import PairWeights, classify_market, label_single_multiple, pair_trades
from impactlab.exceptions import IncompatibleMatricesError, OrderingError
from impactlab.replay import QuoteSeries, TradeSeries


def _quotes(timestamps):
    n = len(timestamps)
    return QuoteSeries.from_arrays("Q", timestamps, [99] * n, [101] * n)


def _trades(timestamps):
    n = len(timestamps)
    return TradeSeries.from_arrays("T", timestamps, [1] * n, [10] * n, [100] * n)


def _scan_pairs(quote_ts, trade_ts):
    """Linear-scan oracle: last quote strictly before, first quote at or after."""
    pairs = []
    for t_index, ts in enumerate(trade_ts):
        before = [k for k, q in enumerate(quote_ts) if q < ts]
        after = [k for k, q in enumerate(quote_ts) if q >= ts]
        if before and after:
            pairs.append((t_index, before[-1], after[0]))
    return pairs


def test_pairing_brackets_trades():
    paired = pair_trades(_quotes([10, 20, 30]), _trades([5, 12, 15, 25, 30, 35]))
    assert list(zip(paired.trade_index, paired.prev_index, paired.next_index)) == [
        (1, 0, 1),
        (2, 0, 1),
        (3, 1, 2),
        (4, 1, 2),
    ]
    assert paired.dropped == 2
    assert paired.total == 6


def test_quote_at_trade_time_is_the_following_quote():
    paired = pair_trades(_quotes([10, 20]), _trades([20]))
    assert (paired.prev_index[0], paired.next_index[0]) == (0, 1)


def test_pairing_matches_scan_oracle(small_replays):
    symbols = sorted(small_replays)
    for i in symbols[:2]:
        for j in symbols:
            quotes = small_replays[i].quotes
            trades = small_replays[j].trades
            paired = pair_trades(quotes, trades)
            expected = _scan_pairs(list(quotes.timestamps), list(trades.timestamps))
            got = list(zip(paired.trade_index, paired.prev_index, paired.next_index))
            assert got == expected


def test_unsorted_series_rejected():
    with pytest.raises(OrderingError):
        pair_trades(_quotes([10, 5]), _trades([7]))
    with pytest.raises(OrderingError):
        pair_trades(_quotes([1, 5]), _trades([4, 2]))


def test_labels():
    labeled = label_single_multiple(
        pair_trades(_quotes([10, 20, 30, 40]), _trades([12, 15, 25, 33, 36, 39]))
    )
    np.testing.assert_array_equal(labeled.is_single, [False, False, True, False, False, False])
    assert labeled.single_count == 1
    assert labeled.multiple_count == 5
    assert labeled.weight == pytest.approx(1 / 6)


def test_empty_pairing_has_no_weight():
    labeled = label_single_multiple(pair_trades(_quotes([10]), _trades([5, 20])))
    assert labeled.weight is None
    assert labeled.dropped == 2


def test_labels_match_groupby_oracle(small_replays, small_classification):
    for (i, j), labeled in small_classification.pairs.items():
        paired = labeled.paired
        frame = pd.DataFrame({"prev": paired.prev_index, "next": paired.next_index})
        group_size = frame.groupby(["prev", "next"])["prev"].transform("size")
        np.testing.assert_array_equal(labeled.is_single, (group_size == 1).to_numpy())


def test_weights_from_counts(small_classification):
    weights = small_classification.weights
    for (i, j), labeled in small_classification.pairs.items():
        assert weights.single_counts[i, j] == labeled.single_count
        assert weights.paired_counts[i, j] == len(labeled.is_single)
        assert weights.dropped_counts[i, j] == labeled.dropped
        if labeled.weight is not None:
            assert weights.matrix[i, j] == pytest.approx(labeled.weight)
    assert np.nanmin(weights.matrix) >= 0 and np.nanmax(weights.matrix) <= 1


def test_workers_do_not_change_result(small_replays, small_market, small_classification):
    parallel = classify_market(small_replays, small_market.symbols, workers=4)
    np.testing.assert_array_equal(
        parallel.weights.single_counts, small_classification.weights.single_counts
    )


def test_weight_matrix_missing_where_unpaired():
    weights = PairWeights(
        ("A", "B"),
        np.array([[1, 0], [0, 0]]),
        np.array([[2, 0], [0, 3]]),
        np.zeros((2, 2), dtype=int),
    )
    w = weights.matrix
    assert w[0, 0] == 0.5
    assert np.isnan(w[0, 1]) and np.isnan(w[1, 0])
    assert w[1, 1] == 0.0
    assert weights.mean_single_fraction == pytest.approx(0.25)


def test_pool_sums_counts():
    day = PairWeights(("A",), np.array([[1]]), np.array([[4]]), np.array([[0]]))
    other = PairWeights(("A",), np.array([[3]]), np.array([[4]]), np.array([[2]]))
    pooled = PairWeights.pool([day, other])
    assert pooled.matrix[0, 0] == 0.5
    assert pooled.dropped_counts[0, 0] == 2


def test_pool_rejects_different_universes():
    a = PairWeights(("A",), np.array([[1]]), np.array([[1]]), np.array([[0]]))
    b = PairWeights(("B",), np.array([[1]]), np.array([[1]]), np.array([[0]]))
    with pytest.raises(IncompatibleMatricesError):
        PairWeights.pool([a, b])


def test_records_carry_events_and_labels():
    quotes = _quotes([10, 20, 30])
    trades = _trades([12, 15, 25])
    labeled = label_single_multiple(pair_trades(quotes, trades))
    records = list(labeled.paired.records(quotes, trades, labeled.is_single))
    assert [r.trade.timestamp for r in records] == [12, 15, 25]
    assert [(r.prev_quote.timestamp, r.next_quote.timestamp) for r in records] == [
        (10, 20),
        (10, 20),
        (20, 30),
    ]
    assert [r.label.value for r in records] == ["multiple", "multiple", "single"]
