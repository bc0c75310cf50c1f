"""Tests for normalization and the response matrices."""

import numpy as np
import pytest

from impactlab.classify import PairWeights, classify_market
from impactlab.constants import TradeSubset, XKind, YKind
from impactlab.exceptions import (
    AlignmentError,
    DegenerateSeriesError,
    IncompatibleMatricesError,
)
from impactlab.replay import QuoteSeries, ReplayResult, TradeSeries, replay
from impactlab.response import (
    ResponseMatrix,
    average_days,
    compute_responses,
    normalize,
    prepare_inputs,
    response_matrix,
    signed_volume,
    weighted_response,
)
from impactlab.synth import MarketConfig, generate


@pytest.fixture(scope="module")
def inputs(small_replays, small_classification):
    return prepare_inputs(small_replays, small_classification)


class TestNormalize:
    def test_moments(self, rng):
        series = normalize(rng.normal(3.0, 2.0, size=500))
        assert np.mean(series.values) == pytest.approx(0.0, abs=1e-12)
        assert np.std(series.values) == pytest.approx(1.0, abs=1e-12)

    def test_two_pass_moments(self):
        values = [1.0, 2.0, 4.0, 9.0]
        series = normalize(values)
        mean = sum(values) / 4
        std = (sum((v - mean) ** 2 for v in values) / 4) ** 0.5
        assert (series.source_mean, series.source_std) == pytest.approx((mean, std))

    @pytest.mark.parametrize("values", [[], [1.0], [2.0, 2.0, 2.0]])
    def test_degenerate(self, values):
        with pytest.raises(DegenerateSeriesError):
            normalize(values)

    def test_signed_volume_alignment(self):
        with pytest.raises(AlignmentError):
            signed_volume(normalize([1, -1, 1]), normalize([1, 2]))

    def test_signed_volume_is_elementwise_product(self):
        signs = normalize([1, -1, 1, 1])
        volumes = normalize([10, 20, 30, 40])
        np.testing.assert_allclose(signed_volume(signs, volumes), signs.values * volumes.values)


def _oracle(replays, classification, x_kind, y_kind, subset):
    """Loops over every trade of j and its bracketing quotes of i."""
    symbols = classification.symbols
    n = len(symbols)
    values = np.full((n, n), np.nan)
    for i, si in enumerate(symbols):
        quotes = replays[si].quotes
        raw_x = quotes.midpoint if x_kind is XKind.MIDPOINT else quotes.spread.astype(float)
        x = (raw_x - raw_x.mean()) / raw_x.std()
        for j, sj in enumerate(symbols):
            trades = replays[sj].trades
            signs = (trades.signs - trades.signs.mean()) / trades.signs.std()
            volumes = (trades.volumes - trades.volumes.mean()) / trades.volumes.std()
            y = {YKind.SIGN: signs, YKind.VOLUME: volumes, YKind.SIGNED_VOLUME: signs * volumes}[
                y_kind
            ]
            labeled = classification.pairs[(i, j)]
            total, count = 0.0, 0
            for k, t in enumerate(labeled.paired.trade_index):
                single = bool(labeled.is_single[k])
                if subset is TradeSubset.SINGLE and not single:
                    continue
                if subset is TradeSubset.MULTIPLE and single:
                    continue
                prev, nxt = labeled.paired.prev_index[k], labeled.paired.next_index[k]
                total += (x[nxt] - x[prev]) * y[t]
                count += 1
            if count:
                values[i, j] = total / count
    return values


@pytest.mark.parametrize("x_kind", list(XKind))
@pytest.mark.parametrize("y_kind", list(YKind))
@pytest.mark.parametrize("subset", [TradeSubset.ALL, TradeSubset.SINGLE, TradeSubset.MULTIPLE])
def test_matches_loop_oracle(small_replays, small_classification, inputs, x_kind, y_kind, subset):
    matrix = response_matrix(inputs, x_kind, y_kind, subset)
    expected = _oracle(small_replays, small_classification, x_kind, y_kind, subset)
    np.testing.assert_allclose(matrix.values, expected, rtol=1e-10, atol=1e-12)
    assert matrix.name == f"{x_kind.value}_{y_kind.value}_{subset.value}"


def test_counts_add_up(inputs):
    all_trades = response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.ALL)
    single = response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.SINGLE)
    multiple = response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.MULTIPLE)
    np.testing.assert_array_equal(all_trades.counts, single.counts + multiple.counts)


def test_workers_do_not_change_values(inputs):
    serial = response_matrix(inputs, XKind.SPREAD, YKind.VOLUME, TradeSubset.ALL)
    parallel = response_matrix(inputs, XKind.SPREAD, YKind.VOLUME, TradeSubset.ALL, workers=4)
    np.testing.assert_array_equal(serial.values, parallel.values)


def test_planted_self_impact_is_positive(inputs):
    r_m = response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.ALL)
    assert np.all(r_m.values > 0)


def _rescaled_quotes(replays, factor):
    return {
        symbol: ReplayResult(
            QuoteSeries.from_arrays(
                symbol, r.quotes.timestamps, r.quotes.best_bid * factor, r.quotes.best_ask * factor
            ),
            r.trades,
        )
        for symbol, r in replays.items()
    }


def _flipped_signs(replays):
    return {
        symbol: ReplayResult(
            r.quotes,
            TradeSeries.from_arrays(
                symbol, r.trades.timestamps, -r.trades.signs, r.trades.volumes, r.trades.prices
            ),
        )
        for symbol, r in replays.items()
    }


@pytest.mark.parametrize("x_kind", list(XKind))
def test_invariant_to_quote_scale(small_replays, small_classification, inputs, x_kind):
    scaled = prepare_inputs(_rescaled_quotes(small_replays, 7), small_classification)
    for subset in (TradeSubset.ALL, TradeSubset.SINGLE):
        expected = response_matrix(inputs, x_kind, YKind.SIGN, subset)
        actual = response_matrix(scaled, x_kind, YKind.SIGN, subset)
        np.testing.assert_allclose(actual.values, expected.values, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize(
    "y_kind, factor", [(YKind.SIGN, -1), (YKind.SIGNED_VOLUME, -1), (YKind.VOLUME, 1)]
)
def test_flipped_trade_signs(small_replays, small_classification, inputs, y_kind, factor):
    flipped = prepare_inputs(_flipped_signs(small_replays), small_classification)
    for x_kind in XKind:
        expected = response_matrix(inputs, x_kind, y_kind, TradeSubset.ALL)
        actual = response_matrix(flipped, x_kind, y_kind, TradeSubset.ALL)
        np.testing.assert_allclose(actual.values, factor * expected.values, rtol=1e-10, atol=1e-12)


def _weights(symbols, w):
    n = len(symbols)
    paired = np.full((n, n), 10)
    return PairWeights(tuple(symbols), np.rint(w * paired).astype(int), paired, np.zeros((n, n), int))


class TestWeighted:
    @pytest.fixture
    def parts(self, inputs):
        return (
            response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.SINGLE),
            response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.MULTIPLE),
        )

    def test_all_single_weights_give_single_response(self, parts, inputs):
        r_st, r_mt = parts
        weighted = weighted_response(r_st, r_mt, _weights(inputs.symbols, 1.0))
        present = ~np.isnan(r_st.values)
        np.testing.assert_array_equal(weighted.values[present], r_st.values[present])
        assert weighted.subset is TradeSubset.WEIGHTED

    def test_no_single_weights_give_multiple_response(self, parts, inputs):
        r_st, r_mt = parts
        weighted = weighted_response(r_st, r_mt, _weights(inputs.symbols, 0.0))
        both = ~np.isnan(r_st.values) & ~np.isnan(r_mt.values)
        np.testing.assert_array_equal(weighted.values[both], r_mt.values[both])

    def test_interpolates(self, parts, inputs):
        r_st, r_mt = parts
        weighted = weighted_response(r_st, r_mt, _weights(inputs.symbols, 0.3))
        both = ~np.isnan(r_st.values) & ~np.isnan(r_mt.values)
        expected = 0.3 * r_st.values + 0.7 * r_mt.values
        np.testing.assert_allclose(weighted.values[both], expected[both])

    def test_fallback_to_present_side(self):
        symbols = ("A", "B")
        counts = np.ones((2, 2), dtype=int)
        r_st = ResponseMatrix(
            symbols, np.array([[1.0, np.nan], [np.nan, 2.0]]), counts,
            XKind.MIDPOINT, YKind.SIGN, TradeSubset.SINGLE,
        )
        r_mt = ResponseMatrix(
            symbols, np.array([[3.0, 4.0], [np.nan, 6.0]]), counts,
            XKind.MIDPOINT, YKind.SIGN, TradeSubset.MULTIPLE,
        )
        weighted = weighted_response(r_st, r_mt, _weights(symbols, 0.5))
        np.testing.assert_array_equal(
            weighted.values, np.array([[2.0, 4.0], [np.nan, 4.0]])
        )
        assert weighted.metadata["fallback_entries"] == 1

    def test_rejects_mismatched_kinds(self, parts, inputs):
        r_st, _ = parts
        r_mt = response_matrix(inputs, XKind.SPREAD, YKind.SIGN, TradeSubset.MULTIPLE)
        with pytest.raises(IncompatibleMatricesError):
            weighted_response(r_st, r_mt, _weights(inputs.symbols, 0.5))

    def test_rejects_wrong_subsets(self, parts, inputs):
        r_st, r_mt = parts
        with pytest.raises(IncompatibleMatricesError):
            weighted_response(r_mt, r_st, _weights(inputs.symbols, 0.5))


def test_average_days_skips_missing_entries():
    symbols = ("A", "B")
    counts = np.ones((2, 2), dtype=int)
    day1 = ResponseMatrix(
        symbols, np.array([[1.0, np.nan], [3.0, np.nan]]), counts,
        XKind.MIDPOINT, YKind.SIGN, TradeSubset.ALL,
    )
    day2 = ResponseMatrix(
        symbols, np.array([[3.0, 2.0], [np.nan, np.nan]]), counts,
        XKind.MIDPOINT, YKind.SIGN, TradeSubset.ALL,
    )
    averaged = average_days([day1, day2])
    np.testing.assert_array_equal(averaged.values, np.array([[2.0, 2.0], [3.0, np.nan]]))
    np.testing.assert_array_equal(averaged.counts, 2 * counts)
    assert averaged.metadata["days"] == 2


def test_compute_responses_covers_requested_grid(inputs, small_classification):
    matrices = compute_responses(
        [inputs, inputs],
        small_classification.weights,
        list(XKind),
        [YKind.SIGN],
        [TradeSubset.ALL, TradeSubset.WEIGHTED],
    )
    assert sorted(m.name for m in matrices.values()) == [
        "m_sign_all", "m_sign_weighted", "s_sign_all", "s_sign_weighted",
    ]
    single_day = response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.ALL)
    np.testing.assert_allclose(
        matrices[(XKind.MIDPOINT, YKind.SIGN, TradeSubset.ALL)].values, single_day.values
    )


def test_degenerate_stock_is_named(small_replays, small_classification, event):
    frozen = replay(
        [
            event(0, small_classification.symbols[0], "add", "bid", 99, 10, 1),
            event(0, small_classification.symbols[0], "add", "ask", 101, 10, 2),
        ]
    )
    broken = dict(small_replays, **frozen)
    with pytest.raises(DegenerateSeriesError, match=small_classification.symbols[0]):
        prepare_inputs(broken, small_classification)


@pytest.mark.slow
class TestPlantedImpact:
    """Sign recovery of a planted impact matrix on an eight-stock market."""

    @pytest.fixture(scope="class")
    def market(self):
        impact = np.array(
            [[2.0 if i == j else (1.0 if (i + j) % 2 else -1.0) for j in range(8)] for i in range(8)]
        )
        config = MarketConfig.build(8, 600_000, trade_intensity=1.0, quote_intensity=4.0, seed=3)
        return MarketConfig(
            config.symbols, config.session_ms, impact,
            config.trade_intensity, config.quote_intensity, seed=config.seed,
        )

    def _response(self, market):
        replays = replay(generate(market))
        classification = classify_market(replays, market.symbols)
        inputs = prepare_inputs(replays, classification)
        return response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.ALL)

    def test_signs_match_planted_impact(self, market):
        r_m = self._response(market)
        bound = 3.0 / np.sqrt(r_m.counts)
        strong = np.abs(market.impact) >= bound
        assert strong.any()
        np.testing.assert_array_equal(np.sign(r_m.values[strong]), np.sign(market.impact[strong]))

    def test_zero_impact_gives_small_responses(self, market):
        neutral = MarketConfig(
            market.symbols, market.session_ms, np.zeros((8, 8)),
            market.trade_intensity, market.quote_intensity, seed=market.seed,
        )
        r_m = self._response(neutral)
        within = np.abs(r_m.values) <= 4.0 / np.sqrt(r_m.counts)
        assert within.mean() >= 0.99
