"""Single-instrument continuous double auction with price-time priority.

Prices are integer ticks (tick size 1). A limit order with ``price == 0`` is
not accepted here; market orders go through :meth:`MatchingEngine.submit_market`.
Time-in-force is not enforced: expiries are cancellations sent by the caller.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from sortedcontainers import SortedDict

from .events import EventKind, Leg, MarketEvent, Side

INITIAL_REFERENCE_PRICE = 10_000
CIRCUIT_BREAKER_TOLERANCE = 0.10


class EngineError(Exception):
    pass


class DuplicateOrderError(EngineError):
    pass


class OrderNotFoundError(EngineError):
    """Raised for cancels of orders that are filled, cancelled or never existed."""


@dataclass
class EngineOrder:
    order_id: int
    trader_id: str
    side: Side
    price: int
    volume: int
    submitted_at: int = 0

    def __post_init__(self) -> None:
        if self.volume <= 0:
            raise ValueError(f"order {self.order_id}: volume must be positive, got {self.volume}")
        if self.price < 0:
            raise ValueError(f"order {self.order_id}: negative price {self.price}")


@dataclass
class VolumeLedger:
    """Running volume totals.

    ``executed`` counts each matched share once. Every match removes that share
    from both a taker and a maker, so
    ``submitted == resting + 2 * executed + cancelled + lapsed``.
    """

    submitted: int = 0
    executed: int = 0
    cancelled: int = 0
    lapsed: int = 0

    def balance(self, resting: int) -> int:
        """Zero when every submitted share is accounted for."""
        return self.submitted - (resting + 2 * self.executed + self.cancelled + self.lapsed)


@dataclass
class MatchingEngine:
    dynamic_reference_price: int = INITIAL_REFERENCE_PRICE
    bids: SortedDict = field(default_factory=SortedDict)
    asks: SortedDict = field(default_factory=SortedDict)
    ledger: VolumeLedger = field(default_factory=VolumeLedger)

    def __post_init__(self) -> None:
        self._index: dict[int, EngineOrder] = {}
        self._used_ids: set[int] = set()

    # -- queries ---------------------------------------------------------

    def _levels(self, side: Side) -> SortedDict:
        return self.bids if side is Side.BUY else self.asks

    def _best_first(self, side: Side):
        """Price keys of ``side`` from best to worst."""
        levels = self._levels(side)
        return reversed(levels) if side is Side.BUY else iter(levels)

    def best_price(self, side: Side) -> int | None:
        levels = self._levels(side)
        if not levels:
            return None
        return levels.peekitem(-1 if side is Side.BUY else 0)[0]

    def depth(self, side: Side) -> list[tuple[int, int]]:
        """Aggregate ``(price, volume)`` per level, best first."""
        levels = self._levels(side)
        return [(p, sum(o.volume for o in levels[p])) for p in self._best_first(side)]

    def price_volume_map(self, side: Side) -> dict[int, int]:
        return dict(self.depth(side))

    def resting(self, order_id: int) -> EngineOrder | None:
        return self._index.get(order_id)

    def __len__(self) -> int:
        return len(self._index)

    def hypothetical_deepest_execution_price(self, side: Side, volume: int) -> int | None:
        """Deepest contra price a market order of ``volume`` on ``side`` would reach.

        Pure: the book is not touched.
        """
        if volume <= 0:
            raise ValueError("volume must be positive")
        contra = side.contra
        levels = self._levels(contra)
        remaining = volume
        deepest = None
        for price in self._best_first(contra):
            deepest = price
            remaining -= sum(o.volume for o in levels[price])
            if remaining <= 0:
                break
        return deepest

    def circuit_breaker_would_trip(self, side: Side, volume: int) -> bool:
        """True if the order would breach the 10% band, or if the contra side is empty."""
        ref = self.dynamic_reference_price
        if ref <= 0:
            raise ValueError("dynamic reference price must be positive")
        deepest = self.hypothetical_deepest_execution_price(side, volume)
        if deepest is None:
            return True
        return abs(deepest - ref) / ref > CIRCUIT_BREAKER_TOLERANCE

    # -- mutations -------------------------------------------------------

    def _claim_id(self, order_id: int) -> None:
        if order_id in self._used_ids:
            raise DuplicateOrderError(f"order id {order_id} already used")
        self._used_ids.add(order_id)

    def _match(self, side: Side, volume: int, limit: int | None) -> tuple[list[Leg], int]:
        """Consume contra liquidity; returns legs (one per level) and the unfilled volume."""
        contra = side.contra
        levels = self._levels(contra)
        legs: list[Leg] = []
        remaining = volume
        while remaining > 0 and levels:
            price = levels.peekitem(-1 if contra is Side.BUY else 0)[0]
            if limit is not None and (price > limit if side is Side.BUY else price < limit):
                break
            queue: deque[EngineOrder] = levels[price]
            while remaining > 0 and queue:
                maker = queue[0]
                fill = min(remaining, maker.volume)
                maker.volume -= fill
                remaining -= fill
                legs.append(Leg(maker.order_id, price, fill))
                if maker.volume == 0:
                    queue.popleft()
                    del self._index[maker.order_id]
            if not queue:
                del levels[price]
        if legs:
            self.dynamic_reference_price = legs[-1].price
            self.ledger.executed += volume - remaining
        return legs, remaining

    def submit_limit(self, order: EngineOrder) -> list[MarketEvent]:
        """Add a limit order. A crossing limit trades up to its price; the rest rests."""
        if order.price <= 0:
            raise ValueError(f"order {order.order_id}: limit price must be positive")
        self._claim_id(order.order_id)
        self.ledger.submitted += order.volume
        events: list[MarketEvent] = []
        legs, remaining = self._match(order.side, order.volume, order.price)
        if legs:
            events.append(MarketEvent(order.submitted_at, EventKind.TRADE, order.side,
                                      order.trader_id, tuple(legs),
                                      taker_id=order.order_id, taker_volume=order.volume))
        if remaining:
            order.volume = remaining
            self._levels(order.side).setdefault(order.price, deque()).append(order)
            self._index[order.order_id] = order
            events.append(MarketEvent(order.submitted_at, EventKind.NEW, order.side,
                                      order.trader_id,
                                      (Leg(order.order_id, order.price, remaining),)))
        return events

    def submit_market(self, side: Side, volume: int, trader_id: str, order_id: int,
                      timestamp_ms: int = 0) -> list[MarketEvent]:
        """Walk the contra side; whatever is left when it empties lapses.

        An empty contra side gives no events and does not consume ``order_id``.
        """
        if volume <= 0:
            raise ValueError("market order volume must be positive")
        if not self._levels(side.contra):
            return []
        self._claim_id(order_id)
        self.ledger.submitted += volume
        legs, remaining = self._match(side, volume, None)
        self.ledger.lapsed += remaining
        return [MarketEvent(timestamp_ms, EventKind.TRADE, side, trader_id, tuple(legs),
                            taker_id=order_id, taker_volume=volume)]

    def cancel(self, order_id: int, side: Side, price: int, timestamp_ms: int = 0) -> MarketEvent:
        order = self._index.get(order_id)
        if order is None or order.side is not side or order.price != price:
            raise OrderNotFoundError(f"no resting {side.value} order {order_id} at {price}")
        levels = self._levels(side)
        queue = levels[price]
        queue.remove(order)
        if not queue:
            del levels[price]
        del self._index[order_id]
        self.ledger.cancelled += order.volume
        return MarketEvent(timestamp_ms, EventKind.CANCELLED, side, order.trader_id,
                           (Leg(order_id, 0, 0),))

    def resting_volume(self) -> int:
        return sum(o.volume for o in self._index.values())

    def is_crossed(self) -> bool:
        bid, ask = self.best_price(Side.BUY), self.best_price(Side.SELL)
        return bid is not None and ask is not None and bid >= ask
