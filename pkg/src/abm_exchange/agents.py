"""Liquidity takers (fundamentalists, chartists), liquidity providers and their samplers.

Decision functions take explicit uniform/gamma draws so they can be tested
without an RNG; the agent classes at the bottom own per-agent generators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np

from .events import Side

# Keeps pathological power-law draws (alpha near 0) representable.
MAX_VOLUME = 10**8


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ThetaParams:
    """Free parameters; defaults were picked by a stylised-fact search, not fitted to data."""

    N: float = 1.0
    delta: float = 0.0001
    kappa: float = 2.0
    nu: float = 3.0
    sigma: float = 0.01

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ParameterError(f"N must be >= 1, got {self.N}")
        if self.delta < 0:
            raise ParameterError(f"delta must be >= 0, got {self.delta}")
        if self.kappa <= 0:
            raise ParameterError(f"kappa must be > 0, got {self.kappa}")
        if self.nu <= 1:
            raise ParameterError(f"nu must be > 1, got {self.nu}")
        if self.sigma < 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")

    def as_array(self) -> np.ndarray:
        return np.array([self.N, self.delta, self.kappa, self.nu, self.sigma], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ThetaParams":
        return cls(*(float(v) for v in values))


THETA_NAMES = ("N", "delta", "kappa", "nu", "sigma")


@dataclass(frozen=True)
class FixedParams:
    lt_mean: float = 15.0
    lt_min: float = 1.0
    lt_max: float = 60.0
    lp_mean: float = 2.5
    lp_min: float = 0.3
    lp_max: float = 10.0
    gamma: float = 600.0
    xm_low: int = 20
    xm_high: int = 50
    xm_lp: int = 10
    m0: int = 10_000

    def __post_init__(self) -> None:
        if not 0 < self.lt_min < self.lt_max:
            raise ParameterError("need 0 < lt_min < lt_max")
        if not 0 < self.lp_min < self.lp_max:
            raise ParameterError("need 0 < lp_min < lp_max")
        if self.gamma <= 0:
            raise ParameterError("gamma must be positive")


class IntentKind(str, Enum):
    MARKET = "Market"
    LIMIT = "Limit"
    CANCEL = "Cancel"


@dataclass(frozen=True)
class OrderIntent:
    kind: IntentKind
    side: Side
    volume: int
    price: int | None = None
    expiry: float | None = None


class BookView(Protocol):
    """What the decision rules read from the mirror."""

    best_bid: int | None
    best_ask: int | None

    @property
    def spread(self) -> int | None: ...

    @property
    def mid(self): ...

    @property
    def imbalance(self) -> float: ...

    def is_empty(self, side: Side) -> bool: ...


# -- samplers --------------------------------------------------------------

def power_law_continuous(x_m: float, alpha: float, u: float) -> float:
    if alpha <= 0:
        raise ParameterError(f"power-law alpha must be positive, got {alpha}")
    if x_m <= 0:
        raise ParameterError(f"power-law x_m must be positive, got {x_m}")
    return x_m * u ** (-1.0 / alpha)


def sample_power_law(x_m: int, alpha: float, u: float) -> int:
    """Integer volume ``floor(x_m * u**(-1/alpha))``, never below ``x_m``."""
    x = power_law_continuous(x_m, alpha, u)
    if not x < MAX_VOLUME:
        return MAX_VOLUME
    return max(int(x), int(x_m))


def sample_trunc_exp(mean: float, lo: float, hi: float, u: float) -> float:
    """Inverse CDF of an exponential with ``mean`` restricted to ``[lo, hi]``."""
    if not 0 < lo < hi:
        raise ParameterError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    if mean <= 0:
        raise ParameterError(f"mean must be positive, got {mean}")
    mass = -math.expm1(-(hi - lo) / mean)
    return min(hi, max(lo, lo - mean * math.log1p(-u * mass)))


def trunc_exp_mean(mean: float, lo: float, hi: float) -> float:
    """Closed-form mean of the truncated exponential (used for the default tau)."""
    w = hi - lo
    return lo + mean - w * math.exp(-w / mean) / -math.expm1(-w / mean)


# -- decision rules ----------------------------------------------------------

def _taker_alpha(side: Side, rho: float, nu: float) -> float:
    return 1 + rho / nu if side is Side.BUY else 1 - rho / nu


def _floor(gap: float, mid: float, theta: ThetaParams, fixed: FixedParams) -> int:
    return fixed.xm_high if abs(gap) > theta.delta * mid else fixed.xm_low


def _market(side: Side, gap: float, mid: float, book: BookView, theta: ThetaParams,
            fixed: FixedParams, u_vol: float) -> OrderIntent | None:
    if book.is_empty(side.contra):
        return None
    x_m = _floor(gap, mid, theta, fixed)
    alpha = _taker_alpha(side, book.imbalance, theta.nu)
    return OrderIntent(IntentKind.MARKET, side, sample_power_law(x_m, alpha, u_vol))


def fundamentalist_decide(f: float, book: BookView, theta: ThetaParams, fixed: FixedParams,
                          u_vol: float) -> OrderIntent | None:
    mid = float(book.mid)
    if f == mid:
        return None
    side = Side.BUY if f > mid else Side.SELL
    return _market(side, f - mid, mid, book, theta, fixed, u_vol)


@dataclass
class ChartistState:
    ema: float
    tau: float
    t_prev: float = 0.0


def ema_weight(dt: float, tau: float) -> float:
    return -math.expm1(-dt / tau)


def chartist_decide(state: ChartistState, book: BookView, theta: ThetaParams,
                    fixed: FixedParams, now: float, u_vol: float
                    ) -> tuple[ChartistState, OrderIntent | None]:
    mid = float(book.mid)
    lam = ema_weight(now - state.t_prev, state.tau)
    ema = state.ema + lam * (mid - state.ema)
    new_state = ChartistState(ema, state.tau, now)
    if mid == ema:
        return new_state, None
    side = Side.BUY if mid > ema else Side.SELL
    return new_state, _market(side, mid - ema, mid, book, theta, fixed, u_vol)


def provider_rate(side: Side, rho: float, kappa: float) -> float:
    """Gamma rate for the placement offset: asks exp(-rho/kappa), bids exp(rho/kappa)."""
    return math.exp(-rho / kappa) if side is Side.SELL else math.exp(rho / kappa)


def liquidity_provider_decide(book: BookView, theta: ThetaParams, fixed: FixedParams,
                              u_side: float, eta: float, u_vol: float,
                              now: float = 0.0) -> OrderIntent | None:
    """Place one limit order; ``eta`` is the gamma draw for the chosen side.

    Returns None only when a bid would be priced at or below zero.
    """
    rho = book.imbalance
    if u_side < (rho + 1) / 2:
        side, price = Side.SELL, book.best_bid + 1 + math.floor(eta)
    else:
        side, price = Side.BUY, book.best_ask - 1 - math.floor(eta)
    if price <= 0:
        return None
    alpha = 1 - rho / theta.nu if side is Side.SELL else 1 + rho / theta.nu
    volume = sample_power_law(fixed.xm_lp, alpha, u_vol)
    return OrderIntent(IntentKind.LIMIT, side, volume, price, now + fixed.gamma)


def gamma_shape(spread: int | None) -> float:
    return float(max(spread or 0, 1))


# -- agents with their own random streams ----------------------------------

def _uniform(rng: np.random.Generator) -> float:
    # open interval: u = 0 would give an infinite power-law draw
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


@dataclass
class Fundamentalist:
    trader_id: str
    rng: np.random.Generator
    fundamental: float

    @classmethod
    def create(cls, trader_id: str, rng: np.random.Generator, theta: ThetaParams,
               fixed: FixedParams) -> "Fundamentalist":
        x = rng.normal(0.0, theta.sigma) if theta.sigma > 0 else 0.0
        return cls(trader_id, rng, fixed.m0 * math.exp(x))

    def decide(self, book: BookView, theta: ThetaParams, fixed: FixedParams,
               now: float) -> OrderIntent | None:
        return fundamentalist_decide(self.fundamental, book, theta, fixed, _uniform(self.rng))


@dataclass
class Chartist:
    trader_id: str
    rng: np.random.Generator
    state: ChartistState

    def decide(self, book: BookView, theta: ThetaParams, fixed: FixedParams,
               now: float) -> OrderIntent | None:
        self.state, intent = chartist_decide(self.state, book, theta, fixed, now,
                                             _uniform(self.rng))
        return intent


@dataclass
class LiquidityProvider:
    trader_id: str
    rng: np.random.Generator

    def decide(self, book: BookView, theta: ThetaParams, fixed: FixedParams,
               now: float) -> OrderIntent | None:
        u_side = self.rng.random()
        side = Side.SELL if u_side < (book.imbalance + 1) / 2 else Side.BUY
        rate = provider_rate(side, book.imbalance, theta.kappa)
        eta = self.rng.gamma(gamma_shape(book.spread), 1.0 / rate)
        return liquidity_provider_decide(book, theta, fixed, u_side, eta,
                                         _uniform(self.rng), now)
