"""Price-level order book rebuilt from order-flow events.

The book is a decoder, not a matching engine: every removal is an explicit
cancel, delete or execute message, and a message that would cross the book
or reference an unknown order is rejected as an integrity error.
"""

import bisect
import logging
from dataclasses import dataclass

from .constants import EventKind, Side
from .events import OrderEvent
from .exceptions import CrossedBookError, DataIntegrityError, UnknownOrderError

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class RestingOrder:
    """An order resting in the book.

    Attributes:
        side: Book side.
        price: Price in ticks.
        volume: Remaining shares (> 0).
    """

    side: Side
    price: int
    volume: int


class OrderBookState:
    """Per-stock price-level book.

    Keeps, per side, a map price → resting volume plus an ascending list of
    occupied prices, and a map order_id → resting order.

    Example:
        book = OrderBookState("AAPL")
        apply_event(book, event)
        book.best_bid, book.best_ask
    """

    def __init__(self, stock: str) -> None:
        self.stock = stock
        self._levels: dict[Side, dict[int, int]] = {Side.BID: {}, Side.ASK: {}}
        self._prices: dict[Side, list[int]] = {Side.BID: [], Side.ASK: []}
        self._orders: dict[int, RestingOrder] = {}

    @property
    def best_bid(self) -> int | None:
        """Highest occupied bid price, or None when the bid side is empty."""
        prices = self._prices[Side.BID]
        return prices[-1] if prices else None

    @property
    def best_ask(self) -> int | None:
        """Lowest occupied ask price, or None when the ask side is empty."""
        prices = self._prices[Side.ASK]
        return prices[0] if prices else None

    def level_volume(self, side: Side, price: int) -> int:
        """Returns the resting volume at a price level (0 if empty)."""
        return self._levels[side].get(price, 0)

    def levels(self, side: Side) -> dict[int, int]:
        """Returns a copy of the price → volume map of one side."""
        return dict(self._levels[side])

    def order(self, order_id: int) -> RestingOrder | None:
        """Returns the resting order with this id, if any."""
        return self._orders.get(order_id)

    def is_empty(self) -> bool:
        """True when no order rests on either side."""
        return not self._orders

    def __len__(self) -> int:
        return len(self._orders)

    def add(self, order_id: int, side: Side, price: int, volume: int) -> None:
        """Adds a new resting order.

        Raises:
            DataIntegrityError: If the order id is already resting.
            CrossedBookError: If the order would cross the opposite side.
        """
        if order_id in self._orders:
            raise DataIntegrityError(f"{self.stock}: duplicate order_id {order_id}")
        if side is Side.BID and self.best_ask is not None and price >= self.best_ask:
            raise CrossedBookError(
                f"{self.stock}: bid {price} crosses best ask {self.best_ask}"
            )
        if side is Side.ASK and self.best_bid is not None and price <= self.best_bid:
            raise CrossedBookError(
                f"{self.stock}: ask {price} crosses best bid {self.best_bid}"
            )
        self._orders[order_id] = RestingOrder(side, price, volume)
        levels = self._levels[side]
        if price not in levels:
            bisect.insort(self._prices[side], price)
            levels[price] = 0
        levels[price] += volume

    def reduce(self, order_id: int, volume: int) -> RestingOrder:
        """Removes shares from a resting order.

        Removes the order when nothing remains and the price level when it
        is exhausted.

        Returns:
            The order as it was before the reduction.

        Raises:
            UnknownOrderError: If no order rests under this id.
            DataIntegrityError: If more shares are removed than remain.
        """
        order = self._orders.get(order_id)
        if order is None:
            raise UnknownOrderError(f"{self.stock}: unknown order_id {order_id}")
        if volume > order.volume:
            raise DataIntegrityError(
                f"{self.stock}: order {order_id} has {order.volume} shares, "
                f"cannot remove {volume}"
            )
        before = RestingOrder(order.side, order.price, order.volume)
        order.volume -= volume
        if order.volume == 0:
            del self._orders[order_id]
        levels = self._levels[order.side]
        levels[order.price] -= volume
        if levels[order.price] == 0:
            del levels[order.price]
            prices = self._prices[order.side]
            del prices[bisect.bisect_left(prices, order.price)]
        return before


def apply_event(book: OrderBookState, event: OrderEvent) -> OrderBookState:
    """Applies one event to the book of its stock.

    Cancel removes `volume` shares, delete removes the whole remaining
    order (its volume field must equal the remaining shares), execute
    removes the executed shares. Executing the full volume of the best
    level removes that level, so the best quote moves deeper.

    Args:
        book: The book of `event.stock`; updated in place.
        event: The event to apply.

    Returns:
        The same book, updated.

    Raises:
        UnknownOrderError: If cancel/delete/execute references no resting order.
        CrossedBookError: If an add crosses the book.
        DataIntegrityError: On stock, side, price or volume inconsistencies.
    """
    if event.stock != book.stock:
        raise DataIntegrityError(f"event for {event.stock} applied to book of {book.stock}")
    if event.kind is EventKind.ADD:
        book.add(event.order_id, event.side, event.price, event.volume)
        return book

    resting = book.order(event.order_id)
    if resting is None:
        raise UnknownOrderError(
            f"{book.stock}: {event.kind.value} of unknown order_id {event.order_id}"
        )
    if resting.side is not event.side or resting.price != event.price:
        raise DataIntegrityError(
            f"{book.stock}: {event.kind.value} of order {event.order_id} at "
            f"{event.side.value} {event.price}, order rests at "
            f"{resting.side.value} {resting.price}"
        )
    if event.kind is EventKind.DELETE and event.volume != resting.volume:
        raise DataIntegrityError(
            f"{book.stock}: delete of order {event.order_id} with volume "
            f"{event.volume}, {resting.volume} shares rest"
        )
    book.reduce(event.order_id, event.volume)
    return book
