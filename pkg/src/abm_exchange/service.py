"""HTTP service over the simulator and estimators.

The handlers are plain functions from request model to response model; the
CLI calls them directly or through HTTP, so both paths produce the same bytes.
"""
from __future__ import annotations

import csv
import io
import math
import tempfile

import numpy as np
from fastapi import FastAPI, HTTPException

from . import __version__
from .agents import THETA_NAMES, ParameterError
from .analysis.facts import micro_price_series
from .analysis.replay import replay_taq
from .analysis.report import analyse
from .calibration import calibrate, moment_confidence
from .driver import SNAPSHOT_HEADER, run_session, snapshot_rows
from .moments import MOMENT_NAMES, EstimatorError, compute_moments, log_returns
from .schemas import (AnalyseRequest, AnalyseResponse, CalibrateRequest, CalibrateResponse,
                      FactModel, HealthResponse, IntervalModel, MomentRow, MomentsRequest,
                      MomentsResponse, SessionModel, SimulateResponse)
from .taq import TaqParseError, dumps, loads


def _finite(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def handle_simulate(req: SessionModel) -> SimulateResponse:
    result = run_session(req.to_config())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SNAPSHOT_HEADER)
    writer.writerows(snapshot_rows(result.snapshots))
    summary = {k: float(v) for k, v in result.summary.items()}
    return SimulateResponse(summary=summary, taq=dumps(result.records), snapshots=buf.getvalue())


def taq_returns(text: str, level1: bool = False) -> np.ndarray:
    replay = replay_taq(loads(text), level1=level1)
    return log_returns(micro_price_series(replay.snapshots))


def handle_moments(req: MomentsRequest) -> MomentsResponse:
    if (req.returns is None) == (req.taq is None):
        raise ValueError("give exactly one of returns or taq")
    r = np.asarray(req.returns, dtype=float) if req.returns is not None \
        else taq_returns(req.taq, req.level1)
    ref = r if req.reference is None else np.asarray(req.reference, dtype=float)
    m = compute_moments(r, ref, strict=False)
    return MomentsResponse(count=int(r.size),
                           moments={k: _finite(v) for k, v in m.as_dict().items()})


def handle_analyse(req: AnalyseRequest, out_dir: str | None = None) -> AnalyseResponse:
    empirical = loads(req.empirical) if req.empirical is not None else None
    if out_dir is not None:
        facts = analyse(loads(req.taq), out_dir, empirical, req.empirical_level1)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            facts = analyse(loads(req.taq), tmp, empirical, req.empirical_level1)
    models = []
    for f in facts:
        models.append(FactModel(
            dataset=f.dataset, returns=f.returns, trades=f.trades, kurtosis=_finite(f.kurtosis),
            return_acf1=_finite(f.return_acf1), order_flow_acf1=_finite(f.order_flow_acf1),
            depth_decays=f.depth_decays, buyer_slope=_finite(f.buyer_slope),
            seller_slope=_finite(f.seller_slope), upper_tail=_finite(f.upper_tail),
            lower_tail=_finite(f.lower_tail), lee_ready_agreement=_finite(f.lee_ready_agreement),
            unsigned=f.unsigned, notes=f.notes))
    return AnalyseResponse(facts=models)


def handle_calibrate(req: CalibrateRequest) -> CalibrateResponse:
    r = taq_returns(req.empirical, req.level1)
    cal = calibrate(r, req.base.to_config(), budget=req.iters, seed=req.seed,
                    replications=req.replications, n_boot=req.bootstrap)
    theta = []
    for i, name in enumerate(THETA_NAMES):
        ci = cal.confidence
        theta.append(IntervalModel(
            name=name, estimate=float(cal.result.x[i]),
            lower=None if ci is None else _finite(ci.lower[i]),
            upper=None if ci is None else _finite(ci.upper[i])))
    lo, hi = moment_confidence(cal.simulated, cal.weight.cov)
    emp = cal.empirical.as_array()
    moments = [MomentRow(name=name, empirical=_finite(emp[j]),
                         simulated=_finite(cal.simulated[j]), lower=_finite(lo[j]),
                         upper=_finite(hi[j]))
               for j, name in enumerate(MOMENT_NAMES)]
    trace = [dict(iteration=t.iteration, best=t.best, threshold=t.threshold,
                  worst=t.simplex[-1], spread=t.spread) for t in cal.result.trace]
    return CalibrateResponse(objective=cal.fun, converged=cal.result.converged,
                             evaluations=cal.result.evaluations, theta=theta,
                             moments=moments, trace=trace)


def create_app() -> FastAPI:
    app = FastAPI(title="abm-exchange", version=__version__)

    def guarded(fn, req):
        try:
            return fn(req)
        except (ValueError, ParameterError, EstimatorError, TaqParseError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(version=__version__)

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SessionModel) -> SimulateResponse:
        return guarded(handle_simulate, req)

    @app.post("/moments", response_model=MomentsResponse)
    def moments(req: MomentsRequest) -> MomentsResponse:
        return guarded(handle_moments, req)

    @app.post("/analyse", response_model=AnalyseResponse)
    def analyse_(req: AnalyseRequest) -> AnalyseResponse:
        return guarded(handle_analyse, req)

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate_(req: CalibrateRequest) -> CalibrateResponse:
        return guarded(handle_calibrate, req)

    return app


app = create_app()
