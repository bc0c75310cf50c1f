"""Order-flow event schema and codecs.

Two equivalent encodings of the same event stream:

Text (UTF-8, LF terminated):
    ts_ms,stock,kind,side,price_ticks,volume,order_id
    34200000,AAPL,add,bid,10000,500,1

Binary: each record is a 4-byte little-endian length (always 34) followed
by the fields in header order with fixed widths:

    ts_ms     uint64   milliseconds since session open
    stock     8 bytes  ASCII symbol, NUL padded
    kind      1 byte   A=add C=cancel D=delete E=execute
    side      1 byte   B=bid S=ask
    price     uint32   price in ticks
    volume    uint32   shares
    order_id  uint64

Parsing enforces the field invariants and non-decreasing timestamps.
Order-id consistency is checked later, when events are applied to a book.
"""

import logging
import struct
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

from .constants import (
    BINARY_LENGTH_FORMAT,
    BINARY_RECORD_FORMAT,
    EVENT_FIELD_COUNT,
    EVENT_HEADER,
    SYMBOL_MAX_LENGTH,
    EventKind,
    Side,
)
from .exceptions import EventParseError, OrderingError

logger = logging.getLogger(__name__)

_RECORD = struct.Struct(BINARY_RECORD_FORMAT)
_LENGTH = struct.Struct(BINARY_LENGTH_FORMAT)

_KIND_CODES: dict[EventKind, bytes] = {
    EventKind.ADD: b"A",
    EventKind.CANCEL: b"C",
    EventKind.DELETE: b"D",
    EventKind.EXECUTE: b"E",
}
_SIDE_CODES: dict[Side, bytes] = {Side.BID: b"B", Side.ASK: b"S"}
_KINDS_BY_CODE = {code: kind for kind, code in _KIND_CODES.items()}
_SIDES_BY_CODE = {code: side for side, code in _SIDE_CODES.items()}
_KINDS_BY_NAME = {kind.value: kind for kind in EventKind}
_SIDES_BY_NAME = {side.value: side for side in Side}


@dataclass(frozen=True, slots=True)
class OrderEvent:
    """One order-flow message.

    Attributes:
        timestamp: Milliseconds since session open.
        stock: Symbol.
        kind: add, cancel, delete or execute.
        side: Book side of the (resting) order.
        price: Price in integer ticks.
        volume: Shares added, removed or executed.
        order_id: Identifier of the order, unique per stock.
    """

    timestamp: int
    stock: str
    kind: EventKind
    side: Side
    price: int
    volume: int
    order_id: int

    def to_line(self) -> str:
        """Returns the event as one text-schema line without terminator."""
        return (
            f"{self.timestamp},{self.stock},{self.kind.value},{self.side.value},"
            f"{self.price},{self.volume},{self.order_id}"
        )

    def to_record(self) -> bytes:
        """Returns the event as one length-prefixed binary record."""
        body = _RECORD.pack(
            self.timestamp,
            self.stock.encode("ascii"),
            _KIND_CODES[self.kind],
            _SIDE_CODES[self.side],
            self.price,
            self.volume,
            self.order_id,
        )
        return _LENGTH.pack(len(body)) + body


def parse_events(source: str | bytes | Iterable[str]) -> list[OrderEvent]:
    """Parses an event stream in either encoding.

    Args:
        source: Text of a whole file, an iterable of text lines (header
            first), or the bytes of a binary file.

    Returns:
        Events in stream order (timestamps non-decreasing).

    Raises:
        EventParseError: If a record is malformed; carries its position.
        OrderingError: If a timestamp is smaller than its predecessor.
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        events = list(_parse_binary(bytes(source)))
    else:
        lines = source.splitlines() if isinstance(source, str) else source
        events = list(_parse_text(lines))
    logger.debug("Parsed %d events", len(events))
    return events


def read_events(path: str | Path) -> list[OrderEvent]:
    """Reads an event file; `.bin` files use the binary framing.

    Args:
        path: Event file path.

    Returns:
        Parsed events.
    """
    path = Path(path)
    if path.suffix == ".bin":
        return parse_events(path.read_bytes())
    with path.open("r", encoding="utf-8", newline="") as handle:
        return parse_events(line.rstrip("\n") for line in handle)


def serialize_events(events: Sequence[OrderEvent], binary: bool = False) -> str | bytes:
    """Encodes events; inverse of parse_events for canonical input.

    Args:
        events: Events to encode.
        binary: Use the length-prefixed binary framing instead of text.

    Returns:
        The encoded stream (bytes when binary, str otherwise).
    """
    if binary:
        return b"".join(event.to_record() for event in events)
    lines = [EVENT_HEADER, *(event.to_line() for event in events)]
    return "\n".join(lines) + "\n"


def write_events(path: str | Path, events: Sequence[OrderEvent]) -> Path:
    """Writes events to disk; `.bin` files use the binary framing.

    Args:
        path: Destination file.
        events: Events to write.

    Returns:
        The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".bin":
        path.write_bytes(serialize_events(events, binary=True))
    else:
        with path.open("w", encoding="utf-8", newline="") as handle:
            handle.write(serialize_events(events))
    return path


def _parse_text(lines: Iterable[str]) -> Iterator[OrderEvent]:
    iterator = iter(lines)
    header = next(iterator, None)
    if header is None:
        raise EventParseError("empty event stream, header missing", 1)
    if header.strip() != EVENT_HEADER:
        raise EventParseError(f"unexpected header {header!r}", 1)

    last_ts = -1
    for line_no, line in enumerate(iterator, start=2):
        fields = line.split(",")
        if len(fields) != EVENT_FIELD_COUNT:
            raise EventParseError(
                f"expected {EVENT_FIELD_COUNT} fields, got {len(fields)}", line_no
            )
        ts, stock, kind, side, price, volume, order_id = fields
        kind_value = _KINDS_BY_NAME.get(kind)
        if kind_value is None:
            raise EventParseError(f"unknown kind {kind!r}", line_no)
        side_value = _SIDES_BY_NAME.get(side)
        if side_value is None:
            raise EventParseError(f"unknown side {side!r}", line_no)
        event = OrderEvent(
            timestamp=_parse_int(ts, "ts_ms", line_no),
            stock=_check_symbol(stock, line_no, "line"),
            kind=kind_value,
            side=side_value,
            price=_parse_int(price, "price_ticks", line_no),
            volume=_parse_int(volume, "volume", line_no),
            order_id=_parse_int(order_id, "order_id", line_no),
        )
        _check_event(event, line_no, "line")
        if event.timestamp < last_ts:
            raise OrderingError(
                f"line {line_no}: timestamp {event.timestamp} precedes {last_ts}"
            )
        last_ts = event.timestamp
        yield event


def _parse_binary(data: bytes) -> Iterator[OrderEvent]:
    offset = 0
    last_ts = -1
    while offset < len(data):
        if offset + _LENGTH.size > len(data):
            raise EventParseError("truncated record length", offset, "offset")
        (length,) = _LENGTH.unpack_from(data, offset)
        if length != _RECORD.size:
            raise EventParseError(
                f"record length {length}, expected {_RECORD.size}", offset, "offset"
            )
        start = offset + _LENGTH.size
        if start + length > len(data):
            raise EventParseError("truncated record", offset, "offset")
        ts, stock, kind, side, price, volume, order_id = _RECORD.unpack_from(data, start)
        kind_value = _KINDS_BY_CODE.get(kind)
        side_value = _SIDES_BY_CODE.get(side)
        if kind_value is None or side_value is None:
            raise EventParseError(f"unknown kind/side code {kind!r}/{side!r}", offset, "offset")
        try:
            symbol = stock.rstrip(b"\x00").decode("ascii")
        except UnicodeDecodeError as exc:
            raise EventParseError("symbol is not ASCII", offset, "offset") from exc
        event = OrderEvent(
            timestamp=ts,
            stock=_check_symbol(symbol, offset, "offset"),
            kind=kind_value,
            side=side_value,
            price=price,
            volume=volume,
            order_id=order_id,
        )
        _check_event(event, offset, "offset")
        if event.timestamp < last_ts:
            raise OrderingError(
                f"offset {offset}: timestamp {event.timestamp} precedes {last_ts}"
            )
        last_ts = event.timestamp
        offset = start + length
        yield event


def _parse_int(text: str, name: str, line_no: int) -> int:
    # int() would also take whitespace, signs, underscores and non-ASCII digits
    if not (text.isascii() and text.isdigit()):
        raise EventParseError(f"{name} is not a non-negative integer: {text!r}", line_no)
    return int(text)


def _check_symbol(symbol: str, position: int, unit: str) -> str:
    if not symbol or len(symbol) > SYMBOL_MAX_LENGTH or not symbol.isascii():
        raise EventParseError(f"invalid symbol {symbol!r}", position, unit)
    return symbol


def _check_event(event: OrderEvent, position: int, unit: str) -> None:
    if event.timestamp < 0:
        raise EventParseError("timestamp must be >= 0", position, unit)
    if event.price <= 0:
        raise EventParseError("price must be > 0", position, unit)
    if event.volume <= 0:
        raise EventParseError("volume must be > 0", position, unit)
    if event.order_id < 0:
        raise EventParseError("order_id must be >= 0", position, unit)
