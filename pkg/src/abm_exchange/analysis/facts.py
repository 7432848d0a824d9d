"""Stylised-fact statistics: trade signing, order-flow and return ACFs, tails, depth, impact."""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from statsmodels.tsa.stattools import acf as _acf

log = logging.getLogger(__name__)

IMPACT_BINS = 20
IMPACT_RANGE = (0.1, 10.0)
MIN_TAIL = 50


class AnalysisError(ValueError):
    pass


# -- price series ------------------------------------------------------------

def price_series(snapshots, field: str = "micro") -> np.ndarray:
    """Tick-by-tick prices: the chosen snapshot field, sampled whenever it changes."""
    out: list[float] = []
    last = None
    for s in snapshots:
        value = getattr(s, field)
        if value is None or value == last:
            continue
        out.append(float(value))
        last = value
    return np.asarray(out, dtype=float)


def micro_price_series(snapshots) -> np.ndarray:
    return price_series(snapshots, "micro")


def mid_price_series(snapshots) -> np.ndarray:
    return price_series(snapshots, "mid")


# -- trade signing -----------------------------------------------------------

def prevailing_mids(trade_times, quote_times, quote_mids) -> list[float | None]:
    """Mid of the last quote strictly before each trade (None when there is none)."""
    qt = np.asarray(quote_times)
    idx = np.searchsorted(qt, np.asarray(trade_times), side="left") - 1
    return [None if i < 0 else quote_mids[i] for i in idx]


@dataclass(frozen=True)
class SignedTrades:
    signs: np.ndarray
    skipped: int


def lee_ready_sign(prices: Sequence[float], mids: Sequence[float | None]) -> SignedTrades:
    """Quote rule against the prevailing mid, tick rule for trades at the mid.

    Trades without a prevailing quote get sign 0 and are counted as skipped;
    so are trades at the mid before any price change has been seen.
    """
    if len(prices) != len(mids):
        raise AnalysisError("one prevailing mid per trade is required")
    signs = np.zeros(len(prices), dtype=int)
    skipped = 0
    tick = 0
    prev_price = None
    for k, (p, m) in enumerate(zip(prices, mids)):
        if prev_price is not None and p != prev_price:
            tick = 1 if p > prev_price else -1
        prev_price = p
        if m is None:
            skipped += 1
            continue
        if p > m:
            signs[k] = 1
        elif p < m:
            signs[k] = -1
        elif tick:
            signs[k] = tick
        else:
            skipped += 1
    if skipped:
        log.info("%d trades left unsigned", skipped)
    return SignedTrades(signs, skipped)


# -- autocorrelations --------------------------------------------------------

def _autocorr(x: np.ndarray, max_lag: int) -> np.ndarray:
    # the lag-adjusted estimator gives exactly -1 at lag 1 for an alternating sequence
    return np.asarray(_acf(x, nlags=max_lag, adjusted=True, fft=True))[1:]


def order_flow_acf(signs, max_lag: int = 500) -> np.ndarray:
    """Autocorrelation of the trade-sign sequence at lags 1..max_lag."""
    x = np.asarray(signs, dtype=float)
    x = x[x != 0]
    if x.size < 3:
        raise AnalysisError("need at least three signed trades")
    if x.size < max_lag + 1:
        log.warning("only %d signed trades; max_lag reduced from %d", x.size, max_lag)
        max_lag = x.size - 2
    if np.all(x == x[0]):
        return np.full(max_lag, np.nan)
    return _autocorr(x, max_lag)


@dataclass(frozen=True)
class ReturnACF:
    returns: np.ndarray
    absolute: np.ndarray
    band: float


def return_acf(returns, max_lag: int = 100) -> ReturnACF:
    r = np.asarray(returns, dtype=float)
    if r.size <= max_lag:
        raise AnalysisError(f"need more than {max_lag} returns, got {r.size}")
    return ReturnACF(_autocorr(r, max_lag), _autocorr(np.abs(r), max_lag), 3 / math.sqrt(r.size))


# -- tails -------------------------------------------------------------------

@dataclass(frozen=True)
class TailSide:
    alpha: float
    x_min: float
    n: int
    empirical: np.ndarray
    theoretical: np.ndarray


@dataclass(frozen=True)
class TailFit:
    upper: TailSide
    lower: TailSide


def power_law_mle(x, x_min: float) -> TailSide:
    """Closed-form MLE of the density exponent for the observations above ``x_min``."""
    if x_min <= 0:
        raise AnalysisError(f"tail cutoff must be positive, got {x_min}")
    tail = np.sort(np.asarray(x, dtype=float))
    tail = tail[tail > x_min]
    if tail.size < MIN_TAIL:
        raise AnalysisError(f"only {tail.size} tail observations (need {MIN_TAIL})")
    alpha = 1.0 + tail.size / float(np.log(tail / x_min).sum())
    p = (np.arange(1, tail.size + 1) - 0.5) / tail.size
    theoretical = x_min * (1 - p) ** (-1.0 / (alpha - 1.0))
    return TailSide(alpha, x_min, int(tail.size), tail, theoretical)


def tail_fit(returns, percentile: float = 95.0) -> TailFit:
    """Upper tail above the ``percentile`` quantile, lower tail below ``100 - percentile``."""
    r = np.asarray(returns, dtype=float)
    upper = power_law_mle(r, float(np.percentile(r, percentile)))
    lower = power_law_mle(-r, float(-np.percentile(r, 100 - percentile)))
    return TailFit(upper, lower)


# -- depth ---------------------------------------------------------------------

@dataclass(frozen=True)
class DepthProfile:
    bid: np.ndarray
    ask: np.ndarray

    def decays(self) -> bool:
        """Level 1 holds at least as much as any deeper level, on both sides."""
        return bool(all(side[0] >= side[1:].max() for side in (self.bid, self.ask)))


def depth_profile(snapshots, levels: int = 7) -> DepthProfile:
    """Mean resting volume at the occupied levels 1..levels from the best, per side."""
    if not snapshots:
        raise AnalysisError("no snapshots")
    bid = np.array([list(s.bid_depth[:levels]) for s in snapshots], dtype=float)
    ask = np.array([list(s.ask_depth[:levels]) for s in snapshots], dtype=float)
    return DepthProfile(bid.mean(axis=0), ask.mean(axis=0))


# -- price impact ------------------------------------------------------------

@dataclass(frozen=True)
class ImpactCurve:
    side: str
    edges: np.ndarray
    count: np.ndarray
    volume: np.ndarray
    impact: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.count == 0

    def slope(self) -> float:
        """Least-squares slope of log impact on log normalised volume."""
        ok = (self.count > 0) & (self.impact > 0)
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.volume[ok]), np.log(self.impact[ok]), 1)[0])


def normalised_volumes(volumes, days=None) -> np.ndarray:
    """Each volume over its day's total, scaled by the mean daily trade count."""
    v = np.asarray(volumes, dtype=float)
    d = np.zeros(v.size, dtype=int) if days is None else np.asarray(days)
    labels, inverse = np.unique(d, return_inverse=True)
    totals = np.bincount(inverse, weights=v, minlength=labels.size)
    counts = np.bincount(inverse, minlength=labels.size)
    keep = totals > 0
    if not keep.all():
        log.warning("excluding %d days with zero volume", int((~keep).sum()))
    scale = counts[keep].sum() / keep.sum() if keep.any() else 0.0
    out = np.full(v.size, np.nan)
    ok = keep[inverse]
    out[ok] = v[ok] / totals[inverse[ok]] * scale
    return out


def _bin_curve(side: str, omega: np.ndarray, impact: np.ndarray, edges: np.ndarray) -> ImpactCurve:
    nb = edges.size - 1
    idx = np.searchsorted(edges, omega, side="right") - 1
    inside = (idx >= 0) & (idx < nb) & np.isfinite(omega)
    inside |= np.isfinite(omega) & (omega == edges[-1])
    idx = np.where(omega == edges[-1], nb - 1, idx)
    count = np.bincount(idx[inside], minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        vol = np.bincount(idx[inside], weights=omega[inside], minlength=nb) / count
        imp = np.bincount(idx[inside], weights=impact[inside], minlength=nb) / count
    return ImpactCurve(side, edges, count, vol, imp)


def price_impact(signs, volumes, mid_before, mid_after, days=None,
                 bins: int = IMPACT_BINS, span: tuple[float, float] = IMPACT_RANGE
                 ) -> tuple[ImpactCurve, ImpactCurve]:
    """Buyer and seller impact curves over log-spaced normalised-volume bins.

    Impact is the log mid change in the direction of the trade, so a seller
    that knocks the bid down has positive impact.
    """
    s = np.asarray(signs, dtype=int)
    before = np.asarray(mid_before, dtype=float)
    after = np.asarray(mid_after, dtype=float)
    if not (s.size == before.size == after.size == len(volumes)):
        raise AnalysisError("trade arrays must be aligned")
    dp = np.log(after) - np.log(before)
    omega = normalised_volumes(volumes, days)
    edges = np.geomspace(span[0], span[1], bins + 1)
    buy, sell = s > 0, s < 0
    return (_bin_curve("buyer", omega[buy], dp[buy], edges),
            _bin_curve("seller", omega[sell], -dp[sell], edges))
