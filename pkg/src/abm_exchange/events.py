"""Order-book event types shared by the engine, the feed codec and the mirror."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Side(str, Enum):
    BUY = "Buy"
    SELL = "Sell"

    @property
    def contra(self) -> "Side":
        return Side.SELL if self is Side.BUY else Side.BUY

    @property
    def sign(self) -> int:
        return 1 if self is Side.BUY else -1


class EventKind(str, Enum):
    NEW = "New"
    TRADE = "Trade"
    CANCELLED = "Cancelled"


@dataclass(frozen=True)
class Leg:
    order_id: int
    price: int
    volume: int


@dataclass(frozen=True)
class MarketEvent:
    """One feed report.

    ``legs`` holds ``(order_id, price, volume)`` triples: the resting order for
    New, one maker per consumed level for Trade, ``(id, 0, 0)`` for Cancelled.

    ``taker_id`` and ``taker_volume`` describe the aggressing order of a Trade.
    They never go on the wire and are ignored by equality, so a decoded frame
    compares equal to the event it came from.
    """

    timestamp_ms: int
    kind: EventKind
    side: Side
    trader_id: str
    legs: tuple[Leg, ...]
    taker_id: int | None = field(default=None, compare=False)
    taker_volume: int | None = field(default=None, compare=False)

    @property
    def volume(self) -> int:
        return sum(leg.volume for leg in self.legs)
