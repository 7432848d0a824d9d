"""Market-data feed: text frame codec plus loopback and UDP transports.

A frame is one event as ASCII text::

    1621159235548,Trade,Sell,LF|1,50,100|2,49,50

i.e. ``<ms>,<Kind>,<Side>,<Trader>`` followed by one ``|<id>,<price>,<vol>``
per leg. Frames never contain a newline.
"""
from __future__ import annotations

import logging
import queue
import socket
from collections.abc import Iterable, Iterator

from .events import EventKind, Leg, MarketEvent, Side

log = logging.getLogger(__name__)

MTU_BUDGET = 1400
_RESERVED = set(",|\n\r")


class FeedDecodeError(ValueError):
    def __init__(self, field: str, value: str, frame: str) -> None:
        super().__init__(f"bad {field} {value!r} in frame {frame!r}")
        self.field = field


class TransportError(OSError):
    pass


def encode_event(event: MarketEvent) -> bytes:
    if _RESERVED & set(event.trader_id):
        raise ValueError(f"trader id {event.trader_id!r} contains a reserved character")
    head = f"{event.timestamp_ms},{event.kind.value},{event.side.value},{event.trader_id}"
    body = "".join(f"|{leg.order_id},{leg.price},{leg.volume}" for leg in event.legs)
    return (head + body).encode("ascii")


def _int(field: str, text: str, frame: str) -> int:
    # int() would accept " 1", "+1" and "1_0"; the wire format is plain digits
    digits = text[1:] if text.startswith("-") else text
    if not digits.isdigit() or not digits.isascii():
        raise FeedDecodeError(field, text, frame)
    return int(text)


def decode_event(frame: bytes) -> MarketEvent:
    try:
        text = frame.decode("ascii")
    except UnicodeDecodeError:
        raise FeedDecodeError("encoding", repr(frame[:40]), repr(frame[:40])) from None
    parts = text.split("|")
    head = parts[0].split(",")
    if len(head) != 4:
        raise FeedDecodeError("header", parts[0], text)
    ts, kind, side, trader = head
    timestamp = _int("timestamp", ts, text)
    try:
        kind_ = EventKind(kind)
    except ValueError:
        raise FeedDecodeError("kind", kind, text) from None
    try:
        side_ = Side(side)
    except ValueError:
        raise FeedDecodeError("side", side, text) from None
    if "\n" in trader or "\r" in trader:
        raise FeedDecodeError("trader", trader, text)
    legs = []
    for raw in parts[1:]:
        fields = raw.split(",")
        if len(fields) != 3:
            raise FeedDecodeError("leg", raw, text)
        legs.append(Leg(_int("order_id", fields[0], text), _int("price", fields[1], text),
                        _int("volume", fields[2], text)))
    return MarketEvent(timestamp, kind_, side_, trader, tuple(legs))


def split_event(event: MarketEvent, budget: int = MTU_BUDGET) -> list[bytes]:
    """Encode ``event`` into one or more frames no longer than ``budget`` bytes.

    Extra frames repeat the header and timestamp and carry the remaining legs.
    """
    head = encode_event(MarketEvent(event.timestamp_ms, event.kind, event.side,
                                    event.trader_id, ()))
    frames: list[bytes] = []
    current = head
    for leg in event.legs:
        piece = f"|{leg.order_id},{leg.price},{leg.volume}".encode("ascii")
        if len(head) + len(piece) > budget:
            raise TransportError(f"single leg does not fit in {budget} bytes")
        if len(current) + len(piece) > budget:
            frames.append(current)
            current = head
        current += piece
    frames.append(current)
    return frames


def _check_size(frame: bytes, budget: int) -> None:
    if len(frame) > budget:
        raise TransportError(f"frame of {len(frame)} bytes exceeds budget of {budget}")


class LoopbackTransport:
    """In-process feed; lossless and order preserving."""

    def __init__(self, budget: int = MTU_BUDGET) -> None:
        self.budget = budget
        self._queue: queue.SimpleQueue[bytes] = queue.SimpleQueue()

    def publish(self, frame: bytes) -> None:
        _check_size(frame, self.budget)
        self._queue.put(frame)

    def publish_event(self, event: MarketEvent) -> None:
        for frame in split_event(event, self.budget):
            self.publish(frame)

    def drain(self) -> list[bytes]:
        frames = []
        while not self._queue.empty():
            frames.append(self._queue.get_nowait())
        return frames

    def receive(self, timeout: float | None = None) -> bytes:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("no frame within timeout") from None

    def subscribe(self) -> Iterator[bytes]:
        while not self._queue.empty():
            yield self._queue.get_nowait()


class UdpPublisher:
    """Fire-and-forget datagram sender; sends succeed with nobody listening."""

    def __init__(self, host: str, port: int, budget: int = MTU_BUDGET) -> None:
        self.address = (host, port)
        self.budget = budget
        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        except OSError as exc:
            raise TransportError(f"cannot open datagram socket: {exc}") from exc

    def publish(self, frame: bytes) -> None:
        _check_size(frame, self.budget)
        try:
            self._sock.sendto(frame, self.address)
        except ConnectionRefusedError:
            # ICMP port unreachable from an earlier send; no listener is fine
            log.debug("no listener on %s:%d", *self.address)
        except OSError as exc:
            raise TransportError(f"send to {self.address} failed: {exc}") from exc

    def publish_event(self, event: MarketEvent) -> None:
        for frame in split_event(event, self.budget):
            self.publish(frame)

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "UdpPublisher":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class UdpSubscriber:
    def __init__(self, host: str, port: int, timeout: float = 1.0) -> None:
        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
            self._sock.bind((host, port))
        except OSError as exc:
            raise TransportError(f"cannot bind {host}:{port}: {exc}") from exc
        self._sock.settimeout(timeout)

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def receive(self, timeout: float | None = None) -> bytes:
        if timeout is not None:
            self._sock.settimeout(timeout)
        try:
            frame, _ = self._sock.recvfrom(65535)
        except socket.timeout:
            raise TransportError("no frame within timeout") from None
        return frame

    def subscribe(self) -> Iterator[bytes]:
        """Yield frames until the socket times out."""
        while True:
            try:
                yield self.receive()
            except TransportError:
                return

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "UdpSubscriber":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


def decode_all(frames: Iterable[bytes]) -> list[MarketEvent]:
    return [decode_event(f) for f in frames]
