"""Rebuild book snapshots and trades from a TAQ file."""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from fractions import Fraction

from ..events import EventKind, Leg, MarketEvent, Side
from ..mirror import INITIAL_ASK, INITIAL_BID, BookState, MirrorBook, imbalance, micro_price
from ..taq import TaqParseError, TaqRecord


@dataclass(frozen=True)
class TradeRecord:
    timestamp_ms: int
    sign: int
    volume: int
    price: float
    mid_before: float
    mid_after: float


@dataclass
class Replay:
    snapshots: list[BookState]
    trades: list[TradeRecord]


def records_to_events(records: Iterable[TaqRecord]) -> list[MarketEvent]:
    """Inverse of the TAQ writer: regroup unbroken and leg rows into Trade events."""
    events: list[MarketEvent] = []
    head: TaqRecord | None = None
    legs: list[Leg] = []

    def flush() -> None:
        nonlocal head, legs
        if head is not None:
            events.append(MarketEvent(head.datetime_ms, EventKind.TRADE, head.side, head.trader,
                                      tuple(legs), head.client_order_id, head.volume))
        head, legs = None, []

    for n, r in enumerate(records, start=2):
        if r.type is EventKind.TRADE:
            if r.is_unbroken:
                flush()
                head = r
            elif head is None:
                raise TaqParseError(n, "trade leg without an unbroken row")
            else:
                legs.append(Leg(r.client_order_id, r.price, r.volume))
            continue
        flush()
        if r.type is EventKind.NEW:
            events.append(MarketEvent(r.datetime_ms, r.type, r.side, r.trader,
                                      (Leg(r.client_order_id, r.price, r.volume),)))
        else:
            events.append(MarketEvent(r.datetime_ms, r.type, r.side, r.trader,
                                      (Leg(r.client_order_id, 0, 0),)))
    flush()
    return events


def _vwap(legs: Sequence[Leg]) -> float:
    total = sum(leg.volume for leg in legs)
    return sum(leg.price * leg.volume for leg in legs) / total


def replay_events(events: Iterable[MarketEvent], best_bid: int = INITIAL_BID,
                  best_ask: int = INITIAL_ASK, levels: int = 7) -> Replay:
    """Apply full-depth events to a fresh mirror, snapshotting after each one."""
    book = MirrorBook(best_bid, best_ask)
    snapshots = [book.snapshot(levels)]
    trades: list[TradeRecord] = []
    for e in events:
        before = book.mid
        book.apply_event(e)
        snapshots.append(book.snapshot(levels))
        if e.kind is EventKind.TRADE and e.legs:
            trades.append(TradeRecord(e.timestamp_ms, e.side.sign, e.volume, _vwap(e.legs),
                                      float(before), float(book.mid)))
    return Replay(snapshots, trades)


def replay_level1(records: Iterable[TaqRecord]) -> Replay:
    """Treat New rows as best-quote updates (level-1 data) and unbroken rows as trades.

    A trade's post-trade mid is the mid after the first quote update that follows it.
    """
    bid = ask = None
    vb = va = 0
    ts = 0
    snapshots: list[BookState] = []
    trades: list[TradeRecord] = []
    pending: list[tuple[TaqRecord, float, list[Leg]]] = []
    current: list[Leg] | None = None

    def mid() -> Fraction | None:
        return None if bid is None or ask is None else Fraction(bid + ask, 2)

    for r in records:
        ts = r.datetime_ms
        if r.type is EventKind.NEW:
            if r.side is Side.BUY:
                bid, vb = r.price, r.volume
            else:
                ask, va = r.price, r.volume
            m = mid()
            if m is None:
                continue
            snapshots.append(BookState(ts, bid, ask, ask - bid, m, micro_price(bid, ask, vb, va),
                                       imbalance(vb, va), (vb,), (va,)))
            for head, before, legs in pending:
                price = _vwap(legs) if legs and sum(l.volume for l in legs) else float("nan")
                trades.append(TradeRecord(head.datetime_ms, head.side.sign, head.volume, price,
                                          before, float(m)))
            pending.clear()
            current = None
        elif r.type is EventKind.TRADE:
            if r.is_unbroken:
                m = mid()
                current = [] if m is not None else None
                if m is not None:
                    pending.append((r, float(m), current))
            elif current is not None:
                current.append(Leg(r.client_order_id, r.price, r.volume))
    return Replay(snapshots, trades)


def replay_taq(records: Sequence[TaqRecord], level1: bool = False) -> Replay:
    if level1:
        return replay_level1(records)
    return replay_events(records_to_events(records))
