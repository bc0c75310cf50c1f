"""Tests for the price-level order book."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impactlab.book import OrderBookState, apply_event
from impactlab.constants import Side
from impactlab.exceptions import CrossedBookError, DataIntegrityError, UnknownOrderError


@pytest.fixture
def book(event):
    book = OrderBookState("AAPL")
    for e in [
        event(1, "AAPL", "add", "bid", 99, 100, 1),
        event(1, "AAPL", "add", "bid", 98, 200, 2),
        event(1, "AAPL", "add", "ask", 101, 100, 3),
        event(1, "AAPL", "add", "ask", 102, 300, 4),
    ]:
        apply_event(book, e)
    return book


def test_best_quotes(book):
    assert (book.best_bid, book.best_ask) == (99, 101)
    assert len(book) == 4


def test_empty_book_has_no_quotes():
    book = OrderBookState("AAPL")
    assert book.best_bid is None and book.best_ask is None
    assert book.is_empty()


def test_levels_aggregate_orders(book, event):
    apply_event(book, event(2, "AAPL", "add", "bid", 99, 50, 5))
    assert book.level_volume(Side.BID, 99) == 150
    assert book.levels(Side.BID) == {98: 200, 99: 150}


def test_partial_cancel_keeps_level(book, event):
    apply_event(book, event(2, "AAPL", "cancel", "bid", 99, 40, 1))
    assert book.level_volume(Side.BID, 99) == 60
    assert book.order(1).volume == 60
    assert book.best_bid == 99


def test_delete_removes_whole_order(book, event):
    apply_event(book, event(2, "AAPL", "delete", "bid", 99, 100, 1))
    assert book.best_bid == 98
    assert book.order(1) is None


def test_delete_volume_must_match_remaining(book, event):
    with pytest.raises(DataIntegrityError):
        apply_event(book, event(2, "AAPL", "delete", "bid", 99, 60, 1))


def test_full_execution_moves_best_deeper(book, event):
    apply_event(book, event(2, "AAPL", "execute", "ask", 101, 100, 3))
    assert book.best_ask == 102
    assert book.level_volume(Side.ASK, 101) == 0


def test_partial_execution(book, event):
    apply_event(book, event(2, "AAPL", "execute", "ask", 101, 30, 3))
    assert book.best_ask == 101
    assert book.level_volume(Side.ASK, 101) == 70


def test_over_execution(book, event):
    with pytest.raises(DataIntegrityError):
        apply_event(book, event(2, "AAPL", "execute", "ask", 101, 101, 3))


@pytest.mark.parametrize(
    "side, price",
    [("bid", 101), ("bid", 105), ("ask", 99), ("ask", 50)],
)
def test_crossing_add(book, event, side, price):
    with pytest.raises(CrossedBookError):
        apply_event(book, event(2, "AAPL", "add", side, price, 10, 9))


def test_unknown_order(book, event):
    with pytest.raises(UnknownOrderError):
        apply_event(book, event(2, "AAPL", "cancel", "bid", 99, 10, 42))


def test_duplicate_order_id(book, event):
    with pytest.raises(DataIntegrityError):
        apply_event(book, event(2, "AAPL", "add", "bid", 97, 10, 1))


def test_side_or_price_mismatch(book, event):
    with pytest.raises(DataIntegrityError):
        apply_event(book, event(2, "AAPL", "cancel", "ask", 99, 10, 1))
    with pytest.raises(DataIntegrityError):
        apply_event(book, event(2, "AAPL", "cancel", "bid", 98, 10, 1))


def test_wrong_stock(book, event):
    with pytest.raises(DataIntegrityError):
        apply_event(book, event(2, "MSFT", "add", "bid", 97, 10, 9))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from([Side.BID, Side.ASK]), st.integers(1, 20), st.integers(1, 50)),
        min_size=1,
        max_size=40,
    ),
    st.data(),
)
def test_levels_match_resting_orders(orders, data):
    book = OrderBookState("X")
    resting = {}
    for order_id, (side, offset, volume) in enumerate(orders):
        price = 100 - offset if side is Side.BID else 100 + offset
        book.add(order_id, side, price, volume)
        resting[order_id] = (side, price, volume)
    removals = data.draw(st.lists(st.sampled_from(sorted(resting)), unique=True))
    for order_id in removals:
        book.reduce(order_id, resting.pop(order_id)[2])

    for side in Side:
        expected = {}
        for s, price, volume in resting.values():
            if s is side:
                expected[price] = expected.get(price, 0) + volume
        assert book.levels(side) == expected
    bids = [p for s, p, _ in resting.values() if s is Side.BID]
    asks = [p for s, p, _ in resting.values() if s is Side.ASK]
    assert book.best_bid == (max(bids) if bids else None)
    assert book.best_ask == (min(asks) if asks else None)
