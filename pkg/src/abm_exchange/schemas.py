"""Request and response models of the HTTP service."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from .agents import FixedParams, ThetaParams
from .driver import SessionConfig


class ThetaModel(BaseModel):
    N: float = Field(ThetaParams.N, ge=1)
    delta: float = Field(ThetaParams.delta, ge=0)
    kappa: float = Field(ThetaParams.kappa, gt=0)
    nu: float = Field(ThetaParams.nu, gt=1)
    sigma: float = Field(ThetaParams.sigma, ge=0)

    def to_params(self) -> ThetaParams:
        return ThetaParams(**self.model_dump())


class FixedModel(BaseModel):
    lt_mean: float = FixedParams.lt_mean
    lt_min: float = FixedParams.lt_min
    lt_max: float = FixedParams.lt_max
    lp_mean: float = FixedParams.lp_mean
    lp_min: float = FixedParams.lp_min
    lp_max: float = FixedParams.lp_max
    gamma: float = FixedParams.gamma
    xm_low: int = FixedParams.xm_low
    xm_high: int = FixedParams.xm_high
    xm_lp: int = FixedParams.xm_lp
    m0: int = FixedParams.m0

    def to_params(self) -> FixedParams:
        return FixedParams(**self.model_dump())


class SessionModel(BaseModel):
    theta: ThetaModel = Field(default_factory=ThetaModel)
    fixed: FixedModel = Field(default_factory=FixedModel)
    horizon: float = Field(3600.0, gt=0)
    seed: int = 0
    n_fundamentalists: int = Field(1, ge=0)
    n_chartists: int = Field(1, ge=0)

    def to_config(self) -> SessionConfig:
        return SessionConfig(theta=self.theta.to_params(), fixed=self.fixed.to_params(),
                             horizon=self.horizon, seed=self.seed,
                             n_fundamentalists=self.n_fundamentalists,
                             n_chartists=self.n_chartists)


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class SimulateResponse(BaseModel):
    summary: dict[str, float]
    taq: str
    snapshots: str


class MomentsRequest(BaseModel):
    returns: Optional[list[float]] = None
    taq: Optional[str] = Field(None, description="TAQ CSV text; micro-price returns are used")
    reference: Optional[list[float]] = None
    level1: bool = False


class MomentsResponse(BaseModel):
    count: int
    moments: dict[str, Optional[float]]


class AnalyseRequest(BaseModel):
    taq: str
    empirical: Optional[str] = None
    empirical_level1: bool = True


class FactModel(BaseModel):
    dataset: str
    returns: int
    trades: int
    kurtosis: Optional[float]
    return_acf1: Optional[float]
    order_flow_acf1: Optional[float]
    depth_decays: Optional[bool]
    buyer_slope: Optional[float]
    seller_slope: Optional[float]
    upper_tail: Optional[float]
    lower_tail: Optional[float]
    lee_ready_agreement: Optional[float]
    unsigned: int
    notes: list[str]


class AnalyseResponse(BaseModel):
    facts: list[FactModel]


class CalibrateRequest(BaseModel):
    empirical: str = Field(..., description="empirical TAQ CSV text")
    level1: bool = True
    base: SessionModel = Field(default_factory=SessionModel)
    iters: int = Field(50, ge=1)
    seed: int = 0
    replications: int = Field(5, ge=1)
    bootstrap: int = Field(1000, ge=2)


class IntervalModel(BaseModel):
    name: str
    estimate: float
    lower: Optional[float] = None
    upper: Optional[float] = None


class MomentRow(BaseModel):
    name: str
    empirical: Optional[float]
    simulated: Optional[float]
    lower: Optional[float]
    upper: Optional[float]


class CalibrateResponse(BaseModel):
    objective: float
    converged: bool
    evaluations: int
    theta: list[IntervalModel]
    moments: list[MomentRow]
    trace: list[dict[str, float]]

