"""Session driver: pre-sampled decision schedule run against the engine through the feed.

Every decision time is drawn up front, sorted, and replayed in order. Each
order goes to the engine, the resulting feed frames go through a transport,
and the mirror that the agents read is rebuilt from the decoded frames only.
"""
from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from fractions import Fraction
from pathlib import Path

import numpy as np

from .agents import (Chartist, ChartistState, FixedParams, Fundamentalist, IntentKind,
                     LiquidityProvider, ThetaParams, sample_trunc_exp, trunc_exp_mean)
from .engine import EngineOrder, MatchingEngine
from .events import EventKind, MarketEvent, Side
from .feed import LoopbackTransport, UdpPublisher, UdpSubscriber, decode_event, split_event
from .mirror import INITIAL_ASK, INITIAL_BID, BookState, MirrorBook, MirrorDesyncError
from .taq import TaqRecord, events_to_records, write_taq

log = logging.getLogger(__name__)

DEFAULT_START_MS = 1_621_414_800_000  # 2021-05-19 09:00:00 UTC


class AgentClass(IntEnum):
    FUNDAMENTALIST = 0
    CHARTIST = 1
    PROVIDER = 2


_PREFIX = {AgentClass.FUNDAMENTALIST: "F", AgentClass.CHARTIST: "C", AgentClass.PROVIDER: "LP"}


class SessionAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    theta: ThetaParams = field(default_factory=ThetaParams)
    fixed: FixedParams = field(default_factory=FixedParams)
    horizon: float = 3600.0
    seed: int = 0
    n_fundamentalists: int = 1
    n_chartists: int = 1
    start_ms: int = DEFAULT_START_MS
    transport: str = "inprocess"
    host: str = "127.0.0.1"
    port: int = 0
    compress: bool = True
    pace: float = 1.0

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.transport not in ("inprocess", "udp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.transport == "udp" and self.compress:
            raise ValueError("datagram transport needs real-time pacing; set compress=false")
        if self.pace <= 0:
            raise ValueError("pace must be positive")

    @property
    def n_takers(self) -> int:
        return self.n_fundamentalists + self.n_chartists

    @property
    def n_providers(self) -> int:
        return int(math.floor(self.theta.N * self.n_takers + 0.5))

    def with_seed(self, seed: int) -> "SessionConfig":
        return replace(self, seed=seed)


# -- config files ----------------------------------------------------------

_THETA_KEYS = {f.name for f in fields(ThetaParams)}
_FIXED_KEYS = {f.name for f in fields(FixedParams)}
_SESSION_KEYS = {f.name: f for f in fields(SessionConfig)}


def _coerce(text: str, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def parse_config(text: str, base: SessionConfig | None = None) -> SessionConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    base = base or SessionConfig()
    theta, fixed, session = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        if key in _THETA_KEYS:
            theta[key] = _coerce(value, getattr(base.theta, key))
        elif key in _FIXED_KEYS:
            fixed[key] = _coerce(value, getattr(base.fixed, key))
        elif key in _SESSION_KEYS and key not in ("theta", "fixed"):
            session[key] = _coerce(value, getattr(base, key))
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return replace(base, theta=replace(base.theta, **theta),
                   fixed=replace(base.fixed, **fixed), **session)


def load_config(path: str | Path) -> SessionConfig:
    return parse_config(Path(path).read_text())


def dump_config(config: SessionConfig) -> str:
    lines = [f"{k} = {getattr(config.theta, k)}" for k in (f.name for f in fields(ThetaParams))]
    lines += [f"{k} = {getattr(config.fixed, k)}" for k in (f.name for f in fields(FixedParams))]
    lines += [f"{f.name} = {str(getattr(config, f.name)).lower() if isinstance(getattr(config, f.name), bool) else getattr(config, f.name)}"
              for f in fields(SessionConfig) if f.name not in ("theta", "fixed")]
    return "\n".join(lines) + "\n"


# -- schedule --------------------------------------------------------------

def agent_rng(seed: int, cls: AgentClass, index: int, purpose: int) -> np.random.Generator:
    """Named, independent stream per (agent, purpose) derived from the master seed."""
    ss = np.random.SeedSequence(seed & (2**64 - 1), spawn_key=(int(cls), index, purpose))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class AgentSpec:
    index: int
    cls: AgentClass
    trader_id: str
    mean_gap: float


@dataclass(frozen=True, order=True)
class Decision:
    time: float
    agent: int


@dataclass
class EventSchedule:
    decisions: list[Decision]
    agents: list[AgentSpec]
    compressed: bool = False

    def __len__(self) -> int:
        return len(self.decisions)

    def agent_class(self, decision: Decision) -> AgentClass:
        return self.agents[decision.agent].cls


def build_schedule(config: SessionConfig) -> EventSchedule:
    fx = config.fixed
    roster = ([AgentClass.FUNDAMENTALIST] * config.n_fundamentalists
              + [AgentClass.CHARTIST] * config.n_chartists
              + [AgentClass.PROVIDER] * config.n_providers)
    counters = {c: 0 for c in AgentClass}
    decisions: list[Decision] = []
    agents: list[AgentSpec] = []
    for index, cls in enumerate(roster):
        counters[cls] += 1
        if cls is AgentClass.PROVIDER:
            mean, lo, hi = fx.lp_mean, fx.lp_min, fx.lp_max
        else:
            mean, lo, hi = fx.lt_mean, fx.lt_min, fx.lt_max
        rng = agent_rng(config.seed, cls, counters[cls], 0)
        t, gaps = 0.0, []
        while True:
            gap = sample_trunc_exp(mean, lo, hi, rng.random())
            if t + gap > config.horizon:
                break
            t += gap
            gaps.append(gap)
            decisions.append(Decision(t, index))
        mean_gap = float(np.mean(gaps)) if gaps else trunc_exp_mean(mean, lo, hi)
        agents.append(AgentSpec(index, cls, f"{_PREFIX[cls]}{counters[cls]}", mean_gap))
    decisions.sort()
    return EventSchedule(decisions, agents)


def compress_event_time(schedule: EventSchedule, config: SessionConfig) -> EventSchedule:
    """Mark a schedule to run back-to-back with simulated timestamps."""
    if config.transport != "inprocess":
        raise ValueError("event-time compression is only available in-process")
    return EventSchedule(schedule.decisions, schedule.agents, compressed=True)


# -- session ---------------------------------------------------------------

@dataclass(frozen=True)
class TradeImpact:
    timestamp_ms: int
    sign: int
    volume: int
    mid_before: Fraction
    mid_after: Fraction


@dataclass
class SessionResult:
    config: SessionConfig
    events: list[MarketEvent]
    snapshots: list[BookState]
    trades: list[TradeImpact]
    summary: dict[str, float | int]
    engine: MatchingEngine
    mirror: MirrorBook

    @property
    def records(self) -> list[TaqRecord]:
        return events_to_records(self.events)


def _make_agents(config: SessionConfig, schedule: EventSchedule):
    agents = []
    for spec in schedule.agents:
        number = int(spec.trader_id.lstrip("FCLP"))
        rng = agent_rng(config.seed, spec.cls, number, 1)
        if spec.cls is AgentClass.FUNDAMENTALIST:
            agents.append(Fundamentalist.create(spec.trader_id, rng, config.theta, config.fixed))
        elif spec.cls is AgentClass.CHARTIST:
            agents.append(Chartist(spec.trader_id, rng,
                                   ChartistState(float(config.fixed.m0), spec.mean_gap)))
        else:
            agents.append(LiquidityProvider(spec.trader_id, rng))
    return agents


class _Feed:
    """Publishes engine events and hands the decoded frames back to the mirror."""

    def __init__(self, config: SessionConfig) -> None:
        self.frames = 0
        if config.transport == "udp":
            self.sub = UdpSubscriber(config.host, config.port, timeout=2.0)
            host, port = self.sub.address
            self.pub = UdpPublisher(host, port)
        else:
            self.pub = self.sub = LoopbackTransport()

    def roundtrip(self, events: list[MarketEvent]) -> list[MarketEvent]:
        sent = 0
        for e in events:
            for frame in split_event(e):
                self.pub.publish(frame)
                sent += 1
        self.frames += sent
        received = []
        for _ in range(sent):
            received.append(decode_event(self.sub.receive(timeout=2.0)))
        return received

    def close(self) -> None:
        if isinstance(self.pub, UdpPublisher):
            self.pub.close()
            self.sub.close()


def run_session(config: SessionConfig, schedule: EventSchedule | None = None) -> SessionResult:
    """Run one trading session from an empty book."""
    if schedule is None:
        schedule = build_schedule(config)
        if config.compress:
            schedule = compress_event_time(schedule, config)
    compressed = schedule.compressed
    if not compressed and config.transport == "inprocess" and config.compress:
        compressed = True
    theta, fixed = config.theta, config.fixed
    engine = MatchingEngine(dynamic_reference_price=fixed.m0)
    mirror = MirrorBook(INITIAL_BID, INITIAL_ASK)
    mirror.timestamp_ms = config.start_ms
    agents = _make_agents(config, schedule)
    feed = _Feed(config)
    wall0 = time.monotonic()

    events: list[MarketEvent] = []
    snapshots: list[BookState] = [mirror.snapshot()]
    trades: list[TradeImpact] = []
    counts = dict(decisions=0, limit_orders=0, market_orders=0, cancellations=0,
                  suppressed_empty=0, suppressed_breaker=0, lt_idle=0, lp_dropped=0,
                  frames=0)
    expiries: list[tuple[float, int, Side, int]] = []
    next_id = 1

    def stamp(t: float) -> int:
        if compressed:
            return config.start_ms + int(round(t * 1000))
        target = wall0 + t / config.pace
        delay = target - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        return int(time.time() * 1000)

    def dispatch(out: list[MarketEvent]) -> None:
        events.extend(out)
        try:
            received = feed.roundtrip(out)
        except Exception as exc:
            raise SessionAborted(f"feed failure: {exc}") from exc
        for e in received:
            try:
                mirror.apply_event(e)
            except MirrorDesyncError as exc:
                raise SessionAborted(f"feed/mirror desync at {e}: {exc}") from exc
            snapshots.append(mirror.snapshot())

    def expire_until(t: float) -> None:
        while expiries and expiries[0][0] <= t:
            when, oid, side, price = heapq.heappop(expiries)
            if engine.resting(oid) is None:
                continue
            ts = stamp(when)
            dispatch([engine.cancel(oid, side, price, ts)])
            counts["cancellations"] += 1

    try:
        for decision in schedule.decisions:
            expire_until(decision.time)
            counts["decisions"] += 1
            agent = agents[decision.agent]
            intent = agent.decide(mirror, theta, fixed, decision.time)
            if intent is None:
                if schedule.agent_class(decision) is AgentClass.PROVIDER:
                    counts["lp_dropped"] += 1
                else:
                    counts["lt_idle"] += 1
                continue
            if intent.kind is IntentKind.MARKET:
                if mirror.is_empty(intent.side.contra):
                    counts["suppressed_empty"] += 1
                    continue
                if engine.circuit_breaker_would_trip(intent.side, intent.volume):
                    counts["suppressed_breaker"] += 1
                    continue
                ts = stamp(decision.time)
                mid_before = mirror.mid
                out = engine.submit_market(intent.side, intent.volume, agent.trader_id,
                                           next_id, ts)
                next_id += 1
                dispatch(out)
                counts["market_orders"] += 1
                trades.append(TradeImpact(ts, intent.side.sign, out[0].volume,
                                          mid_before, mirror.mid))
            else:
                ts = stamp(decision.time)
                order = EngineOrder(next_id, agent.trader_id, intent.side, intent.price,
                                    intent.volume, ts)
                next_id += 1
                dispatch(engine.submit_limit(order))
                counts["limit_orders"] += 1
                heapq.heappush(expiries, (intent.expiry, order.order_id, order.side,
                                          order.price))
        expire_until(config.horizon)
    finally:
        feed.close()

    counts["frames"] = feed.frames
    summary: dict[str, float | int] = dict(counts)
    summary.update(
        trades=sum(1 for e in events if e.kind is EventKind.TRADE),
        events=len(events),
        total_orders=counts["limit_orders"] + counts["market_orders"] + counts["cancellations"],
        executed_volume=engine.ledger.executed,
        lapsed_volume=engine.ledger.lapsed,
        resting_orders=len(engine),
        n_providers=config.n_providers,
        final_best_bid=mirror.best_bid if mirror.best_bid is not None else 0,
        final_best_ask=mirror.best_ask if mirror.best_ask is not None else 0,
        wall_seconds=round(time.monotonic() - wall0, 3),
    )
    return SessionResult(config, events, snapshots, trades, summary, engine, mirror)


# -- output ------------------------------------------------------------------

SNAPSHOT_HEADER = (["timestamp_ms", "best_bid", "best_ask", "spread", "mid", "micro",
                    "imbalance"] + [f"bid{i}" for i in range(1, 8)]
                   + [f"ask{i}" for i in range(1, 8)])


def _fmt(x: Fraction | None) -> str:
    return "" if x is None else f"{float(x):.4f}"


def snapshot_rows(snapshots: list[BookState]) -> list[list[str]]:
    rows = []
    for s in snapshots:
        rows.append([str(s.timestamp_ms), str(s.best_bid), str(s.best_ask), str(s.spread),
                     _fmt(s.mid), _fmt(s.micro), f"{s.imbalance:.6f}",
                     *map(str, s.bid_depth), *map(str, s.ask_depth)])
    return rows


def write_outputs(result: SessionResult, out_dir: str | Path, wall_clock: bool = True) -> None:
    import csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_taq(result.events, out / "taq.csv")
    with open(out / "snapshots.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SNAPSHOT_HEADER)
        writer.writerows(snapshot_rows(result.snapshots))
    summary = dict(result.summary)
    if not wall_clock:
        summary.pop("wall_seconds", None)
    text = "".join(f"{k}={v}\n" for k, v in summary.items())
    (out / "summary.txt").write_text(text)
