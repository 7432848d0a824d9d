"""Trade-and-quote CSV output of a session (and reader for the same schema).

Trades are written twice over: one "unbroken" row for the aggressing order with
price 0 and its full submitted volume, then one row per executed leg carrying
the maker's order id and price.
"""
from __future__ import annotations

import csv
import io
from collections.abc import Iterable
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .events import EventKind, MarketEvent, Side

HEADER = ("DateTime", "TraderMnemonic", "ClientOrderId", "Price", "Volume", "Side", "Type")
_TS_FORMAT = "%Y-%m-%d %H:%M:%S.%f"


class TaqParseError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TaqRecord:
    datetime_ms: int
    trader: str
    client_order_id: int
    price: int
    volume: int
    side: Side
    type: EventKind

    @property
    def is_unbroken(self) -> bool:
        return self.type is EventKind.TRADE and self.price == 0


def format_timestamp(ms: int) -> str:
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return f"{dt:%Y-%m-%d %H:%M:%S}.{ms % 1000:03d}"


def parse_timestamp(text: str) -> int:
    dt = datetime.strptime(text, _TS_FORMAT).replace(tzinfo=timezone.utc)
    return int(dt.timestamp()) * 1000 + dt.microsecond // 1000


def events_to_records(events: Iterable[MarketEvent]) -> list[TaqRecord]:
    prices: dict[int, int] = {}
    rows: list[TaqRecord] = []
    for e in events:
        ts, trader = e.timestamp_ms, e.trader_id
        if e.kind is EventKind.NEW:
            for leg in e.legs:
                prices[leg.order_id] = leg.price
                rows.append(TaqRecord(ts, trader, leg.order_id, leg.price, leg.volume,
                                      e.side, e.kind))
        elif e.kind is EventKind.TRADE:
            taker = e.taker_id if e.taker_id is not None else 0
            volume = e.taker_volume if e.taker_volume is not None else e.volume
            rows.append(TaqRecord(ts, trader, taker, 0, volume, e.side, e.kind))
            rows.extend(TaqRecord(ts, trader, leg.order_id, leg.price, leg.volume,
                                  e.side, e.kind) for leg in e.legs)
        else:
            for leg in e.legs:
                rows.append(TaqRecord(ts, trader, leg.order_id, prices.pop(leg.order_id, 0),
                                      0, e.side, e.kind))
    return rows


def dumps(records: Iterable[TaqRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_ALL, lineterminator="\n")
    writer.writerow(HEADER)
    for r in records:
        writer.writerow((format_timestamp(r.datetime_ms), r.trader, r.client_order_id,
                         r.price, r.volume, r.side.value, r.type.value))
    return buf.getvalue()


def write_taq(events: Iterable[MarketEvent] | Iterable[TaqRecord], path: str | Path) -> None:
    """Write events (or ready-made records) as a TAQ CSV file."""
    items = list(events)
    records = items if items and isinstance(items[0], TaqRecord) else events_to_records(items)
    Path(path).write_text(dumps(records), encoding="ascii", newline="")


def loads(text: str) -> list[TaqRecord]:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise TaqParseError(1, "empty file") from None
    if tuple(header) != HEADER:
        raise TaqParseError(1, f"unexpected header {header}")
    records = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(HEADER):
            raise TaqParseError(line, f"expected {len(HEADER)} fields, got {len(row)}")
        dt, trader, oid, price, volume, side, kind = row
        try:
            records.append(TaqRecord(parse_timestamp(dt), trader, int(oid), int(price),
                                     int(volume), Side(side), EventKind(kind)))
        except ValueError as exc:
            raise TaqParseError(line, str(exc)) from None
    return records


def read_taq(path: str | Path) -> list[TaqRecord]:
    return loads(Path(path).read_text(encoding="ascii"))
