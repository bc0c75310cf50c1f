"""Tests for replaying event streams into quote and trade series."""

import numpy as np
import pytest

from impactlab.constants import EventKind, Side
from impactlab.exceptions import ConfigError, OrderingError, UnknownOrderError
from impactlab.replay import SessionWindow, replay, replay_stock
from impactlab.synth import MarketConfig, generate


@pytest.fixture
def stream(event):
    return [
        event(0, "AAPL", "add", "bid", 99, 100, 1),
        event(0, "AAPL", "add", "ask", 101, 100, 2),
        event(5, "AAPL", "add", "bid", 98, 100, 3),
        event(10, "AAPL", "execute", "ask", 101, 40, 2),
        event(12, "AAPL", "execute", "ask", 101, 60, 2),
        event(15, "AAPL", "add", "ask", 102, 50, 4),
        event(20, "AAPL", "execute", "bid", 99, 100, 1),
    ]


def test_quotes_only_when_two_sided_and_changed(stream):
    result = replay_stock("AAPL", stream)
    quotes = list(result.quotes)
    assert [(q.timestamp, q.best_bid, q.best_ask) for q in quotes] == [
        (0, 99, 101),
        (15, 99, 102),
        (20, 98, 102),
    ]


def test_trade_signs_follow_executed_side(stream):
    trades = list(replay_stock("AAPL", stream).trades)
    assert [(t.timestamp, t.sign, t.volume, t.price) for t in trades] == [
        (10, 1, 40, 101),
        (12, 1, 60, 101),
        (20, -1, 100, 99),
    ]


def test_quote_derived_quantities(stream):
    quotes = replay_stock("AAPL", stream).quotes
    np.testing.assert_array_equal(quotes.spread, [2, 3, 4])
    np.testing.assert_array_equal(quotes.midpoint, [100.0, 100.5, 100.0])


def test_decreasing_timestamps(event):
    events = [
        event(5, "AAPL", "add", "bid", 99, 1, 1),
        event(4, "AAPL", "add", "ask", 101, 1, 2),
    ]
    with pytest.raises(OrderingError):
        replay_stock("AAPL", events)


def test_unknown_execution(event):
    with pytest.raises(UnknownOrderError):
        replay_stock("AAPL", [event(1, "AAPL", "execute", "ask", 101, 1, 7)])


def test_window_filters_output_not_book(stream):
    result = replay(stream, SessionWindow(11, 20))
    aapl = result["AAPL"]
    assert list(aapl.quotes.timestamps) == [15]
    assert list(aapl.trades.timestamps) == [12]


def test_stocks_are_independent(small_events, small_replays):
    symbol = sorted(small_replays)[1]
    alone = replay([e for e in small_events if e.stock == symbol])[symbol]
    np.testing.assert_array_equal(alone.quotes.timestamps, small_replays[symbol].quotes.timestamps)
    np.testing.assert_array_equal(alone.trades.signs, small_replays[symbol].trades.signs)


def test_deterministic_across_workers(small_events, small_replays):
    parallel = replay(small_events, workers=4)
    assert list(parallel) == list(small_replays)
    for symbol, result in small_replays.items():
        np.testing.assert_array_equal(parallel[symbol].quotes.best_bid, result.quotes.best_bid)
        np.testing.assert_array_equal(parallel[symbol].trades.volumes, result.trades.volumes)


def test_series_are_sorted(small_replays):
    for result in small_replays.values():
        assert np.all(np.diff(result.quotes.timestamps) >= 0)
        assert np.all(np.diff(result.trades.timestamps) >= 0)
        assert np.all(result.quotes.best_bid < result.quotes.best_ask)


class TestSessionWindow:
    def test_parse(self):
        assert SessionWindow.parse("100:200") == SessionWindow(100, 200)
        assert SessionWindow.parse(":200") == SessionWindow(None, 200)
        assert SessionWindow.parse(None) == SessionWindow()

    def test_text_form_round_trips(self):
        for text in ("100:200", ":", "5:"):
            assert str(SessionWindow.parse(text)) == text

    @pytest.mark.parametrize("text", ["200:100", "a:b", "1:2:3", "100"])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            SessionWindow.parse(text)


def _count_quotes(events):
    """Counts two-sided best quote changes by rescanning every resting order."""
    resting = {}
    last, count = None, 0
    for e in events:
        if e.kind is EventKind.ADD:
            resting[e.order_id] = [e.side, e.price, e.volume]
        else:
            resting[e.order_id][2] -= e.volume
            if resting[e.order_id][2] == 0:
                del resting[e.order_id]
        bids = [price for side, price, _ in resting.values() if side is Side.BID]
        asks = [price for side, price, _ in resting.values() if side is Side.ASK]
        if bids and asks and (max(bids), min(asks)) != last:
            last = (max(bids), min(asks))
            count += 1
    return count


def test_quote_count_matches_book_rescan():
    market = MarketConfig.build(
        1, 1_200_000, self_impact=2.0, trade_intensity=5.0, quote_intensity=15.0, seed=23
    )
    events = generate(market)[:10_000]
    assert len(events) == 10_000
    assert len(replay_stock(market.symbols[0], events).quotes) == _count_quotes(events)
