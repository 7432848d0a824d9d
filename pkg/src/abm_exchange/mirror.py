"""Listener-side order book rebuilt from feed events alone.

Only price priority is visible here; queue position lives in the engine.
When a side empties, its best price keeps the last value it had so that the
spread and mid stay defined.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import islice

from sortedcontainers import SortedDict

from .events import EventKind, MarketEvent, Side

INITIAL_BID = 9950
INITIAL_ASK = 10050


class MirrorDesyncError(RuntimeError):
    """A trade or cancel referenced an order the mirror has never seen."""


@dataclass(frozen=True)
class BookState:
    timestamp_ms: int
    best_bid: int | None
    best_ask: int | None
    spread: int | None
    mid: Fraction | None
    micro: Fraction | None
    imbalance: float
    bid_depth: tuple[int, ...]
    ask_depth: tuple[int, ...]


def imbalance(bid_volume: int, ask_volume: int) -> float:
    """(v_b - v_a) / (v_b + v_a) with the empty-side conventions."""
    if bid_volume == 0 and ask_volume == 0:
        return 0.0
    return (bid_volume - ask_volume) / (bid_volume + ask_volume)


def micro_price(best_bid: int, best_ask: int, bid_volume: int, ask_volume: int) -> Fraction:
    """Level-1 volume-weighted mid; the plain mid if either level-1 volume is zero."""
    if bid_volume <= 0 or ask_volume <= 0:
        return Fraction(best_bid + best_ask, 2)
    return Fraction(ask_volume * best_bid + bid_volume * best_ask, bid_volume + ask_volume)


class MirrorBook:
    def __init__(self, best_bid: int | None = INITIAL_BID,
                 best_ask: int | None = INITIAL_ASK) -> None:
        self.bids: dict[int, tuple[int, int]] = {}
        self.asks: dict[int, tuple[int, int]] = {}
        self._levels = {Side.BUY: SortedDict(), Side.SELL: SortedDict()}
        self._totals = {Side.BUY: 0, Side.SELL: 0}
        self.best_bid = best_bid
        self.best_ask = best_ask
        self.timestamp_ms = 0

    def _orders(self, side: Side) -> dict[int, tuple[int, int]]:
        return self.bids if side is Side.BUY else self.asks

    def _adjust(self, side: Side, price: int, delta: int) -> None:
        levels = self._levels[side]
        new = levels.get(price, 0) + delta
        if new:
            levels[price] = new
        else:
            del levels[price]
        self._totals[side] += delta

    def _insert(self, side: Side, order_id: int, price: int, volume: int) -> None:
        orders = self._orders(side)
        if order_id in orders:
            raise MirrorDesyncError(f"order {order_id} confirmed twice")
        orders[order_id] = (price, volume)
        self._adjust(side, price, volume)

    def _reduce(self, side: Side, order_id: int, volume: int | None) -> None:
        orders = self._orders(side)
        try:
            price, resting = orders[order_id]
        except KeyError:
            raise MirrorDesyncError(
                f"{side.value} order {order_id} unknown to the mirror") from None
        take = resting if volume is None else volume
        if take > resting:
            raise MirrorDesyncError(f"order {order_id}: fill {take} exceeds resting {resting}")
        if take == resting:
            del orders[order_id]
        else:
            orders[order_id] = (price, resting - take)
        self._adjust(side, price, -take)

    def apply_event(self, event: MarketEvent) -> None:
        if event.kind is EventKind.NEW:
            for leg in event.legs:
                self._insert(event.side, leg.order_id, leg.price, leg.volume)
        elif event.kind is EventKind.TRADE:
            for leg in event.legs:
                self._reduce(event.side.contra, leg.order_id, leg.volume)
        else:
            for leg in event.legs:
                self._reduce(event.side, leg.order_id, None)
        self.timestamp_ms = event.timestamp_ms
        bids, asks = self._levels[Side.BUY], self._levels[Side.SELL]
        if bids:
            self.best_bid = bids.peekitem(-1)[0]
        if asks:
            self.best_ask = asks.peekitem(0)[0]

    # -- derived state ---------------------------------------------------

    @property
    def spread(self) -> int | None:
        if self.best_bid is None or self.best_ask is None:
            return None
        return self.best_ask - self.best_bid

    @property
    def mid(self) -> Fraction | None:
        if self.best_bid is None or self.best_ask is None:
            return None
        return Fraction(self.best_bid + self.best_ask, 2)

    @property
    def micro(self) -> Fraction | None:
        if self.best_bid is None or self.best_ask is None:
            return None
        return micro_price(self.best_bid, self.best_ask,
                           self.level1_volume(Side.BUY), self.level1_volume(Side.SELL))

    @property
    def imbalance(self) -> float:
        return imbalance(self._totals[Side.BUY], self._totals[Side.SELL])

    def total_volume(self, side: Side) -> int:
        return self._totals[side]

    def is_empty(self, side: Side) -> bool:
        return not self._orders(side)

    def level1_volume(self, side: Side) -> int:
        levels = self._levels[side]
        if not levels:
            return 0
        return levels.peekitem(-1 if side is Side.BUY else 0)[1]

    def depth(self, side: Side, levels: int | None = None) -> list[tuple[int, int]]:
        """Occupied ``(price, volume)`` levels, best first."""
        book = self._levels[side]
        keys = reversed(book) if side is Side.BUY else iter(book)
        return [(p, book[p]) for p in islice(keys, levels)]

    def price_volume_map(self, side: Side) -> dict[int, int]:
        return dict(self._levels[side])

    def snapshot(self, levels: int = 7) -> BookState:
        def vols(side: Side) -> tuple[int, ...]:
            v = [vol for _, vol in self.depth(side, levels)]
            return tuple(v + [0] * (levels - len(v)))

        return BookState(self.timestamp_ms, self.best_bid, self.best_ask, self.spread,
                         self.mid, self.micro, self.imbalance, vols(Side.BUY), vols(Side.SELL))
