"""Brute-force price-time matcher used as a test oracle.

Deliberately naive: the book is one flat list of resting orders, and every
match rescans it for the best candidate. Nothing is shared with the engine.
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RefOrder:
    order_id: int
    trader: str
    side: str
    price: int
    volume: int
    seq: int


@dataclass
class RefBook:
    orders: list[RefOrder] = field(default_factory=list)
    seq: int = 0
    reference_price: int = 10_000
    seen: set[int] = field(default_factory=set)

    def _best_contra(self, side: str, limit: int | None) -> RefOrder | None:
        best = None
        for o in self.orders:
            if o.side == side:
                continue
            if limit is not None:
                if side == "Buy" and o.price > limit:
                    continue
                if side == "Sell" and o.price < limit:
                    continue
            if best is None:
                best = o
                continue
            better = o.price < best.price if side == "Buy" else o.price > best.price
            if better or (o.price == best.price and o.seq < best.seq):
                best = o
        return best

    def _take(self, side: str, volume: int, limit: int | None) -> tuple[list[tuple[int, int, int]], int]:
        legs = []
        while volume > 0:
            maker = self._best_contra(side, limit)
            if maker is None:
                break
            qty = min(volume, maker.volume)
            legs.append((maker.order_id, maker.price, qty))
            maker.volume -= qty
            volume -= qty
            if maker.volume == 0:
                self.orders.remove(maker)
        if legs:
            self.reference_price = legs[-1][1]
        return legs, volume

    def limit(self, oid: int, trader: str, side: str, price: int, volume: int, ts: int):
        if oid in self.seen:
            raise KeyError(oid)
        self.seen.add(oid)
        events = []
        legs, rest = self._take(side, volume, price)
        if legs:
            events.append((ts, "Trade", side, trader, tuple(legs)))
        if rest:
            self.seq += 1
            self.orders.append(RefOrder(oid, trader, side, price, rest, self.seq))
            events.append((ts, "New", side, trader, ((oid, price, rest),)))
        return events

    def market(self, oid: int, trader: str, side: str, volume: int, ts: int):
        if not any(o.side != side for o in self.orders):
            return []
        self.seen.add(oid)
        legs, _ = self._take(side, volume, None)
        return [(ts, "Trade", side, trader, tuple(legs))]

    def cancel(self, oid: int, side: str, price: int, ts: int):
        for o in self.orders:
            if o.order_id == oid and o.side == side and o.price == price:
                self.orders.remove(o)
                return [(ts, "Cancelled", side, o.trader, ((oid, 0, 0),))]
        return None

    def price_volume(self, side: str) -> dict[int, int]:
        out: dict[int, int] = {}
        for o in self.orders:
            if o.side == side:
                out[o.price] = out.get(o.price, 0) + o.volume
        return out
