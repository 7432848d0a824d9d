"""Simulated minimum distance calibration with a Nelder-Mead / threshold-accepting search."""
from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .agents import THETA_NAMES, ThetaParams
from .moments import (MOMENT_NAMES, MomentVector, WeightMatrix, bootstrap_weight_matrix,
                      compute_moments, log_returns)

log = logging.getLogger(__name__)

PENALTY = 1e10

DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "N": (1.0, 20.0),
    "delta": (0.0001, 0.05),
    "kappa": (0.5, 10.0),
    "nu": (1.1, 10.0),
    "sigma": (0.0001, 0.1),
}


def bounds_array(bounds: dict[str, tuple[float, float]] = DEFAULT_BOUNDS) -> np.ndarray:
    return np.array([bounds[name] for name in THETA_NAMES], dtype=float)


def quadratic_distance(empirical: np.ndarray, simulated: Sequence[np.ndarray],
                       weight: np.ndarray) -> float:
    """G'WG with G the mean of (empirical - simulated) over replications."""
    g = np.mean([empirical - np.asarray(s, dtype=float) for s in simulated], axis=0)
    return float(g @ weight @ g)


class SMDObjective:
    """f(theta) = G(theta)' W G(theta) over ``replications`` seeded simulations.

    ``simulate(theta, seed)`` returns the simulated moments. Replication i uses
    seed + i for i = 1..I, so f is deterministic in (theta, seed).
    """

    def __init__(self, simulate: Callable[[ThetaParams, int], MomentVector],
                 empirical: MomentVector, weight: np.ndarray, replications: int = 5,
                 seed: int = 0, penalty: float = PENALTY) -> None:
        if replications < 1:
            raise ValueError("need at least one replication")
        self.simulate = simulate
        self.empirical = empirical.as_array()
        self.weight = np.asarray(weight, dtype=float)
        self.replications = replications
        self.seed = seed
        self.penalty = penalty
        self.evaluations = 0
        self.last_moments: list[np.ndarray] = []
        # (theta, mean simulated moments) of every successful evaluation
        self.chain: list[tuple[np.ndarray, np.ndarray]] = []

    def simulated_moments(self, theta: ThetaParams) -> list[np.ndarray]:
        return [self.simulate(theta, self.seed + i).as_array()
                for i in range(1, self.replications + 1)]

    def __call__(self, theta) -> float:
        self.evaluations += 1
        if not isinstance(theta, ThetaParams):
            theta = ThetaParams.from_array(theta)
        try:
            sims = self.simulated_moments(theta)
        except Exception as exc:
            log.warning("simulation failed at %s: %s", theta, exc)
            return self.penalty
        self.last_moments = sims
        if not all(np.all(np.isfinite(s)) for s in sims):
            return self.penalty
        self.chain.append((theta.as_array(), np.mean(sims, axis=0)))
        return quadratic_distance(self.empirical, sims, self.weight)


def session_simulator(base_config, reference_returns) -> Callable[[ThetaParams, int], MomentVector]:
    """Simulator handle running one session and taking moments of its micro-price returns."""
    from dataclasses import replace

    from .analysis.facts import micro_price_series
    from .driver import run_session

    reference = np.asarray(reference_returns, dtype=float)

    def simulate(theta: ThetaParams, seed: int) -> MomentVector:
        result = run_session(replace(base_config, theta=theta, seed=seed))
        r = log_returns(micro_price_series(result.snapshots))
        return compute_moments(r, reference, strict=False)

    return simulate


# -- Nelder-Mead with threshold accepting -----------------------------------

@dataclass(frozen=True)
class NMCoefficients:
    reflection: float
    expansion: float
    contraction: float
    shrink: float

    @classmethod
    def adaptive(cls, n: int) -> "NMCoefficients":
        """Dimension-dependent coefficients (1, 1 + 2/n, 3/4 - 1/(2n), 1 - 1/n)."""
        return cls(1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2.0 * n), 1.0 - 1.0 / n)


@dataclass
class TraceRow:
    iteration: int
    step: str
    threshold: float
    best: float
    simplex: list[float]
    spread: float


@dataclass
class NMTAResult:
    x: np.ndarray
    fun: float
    trace: list[TraceRow]
    evaluations: int
    converged: bool
    history: list[tuple[np.ndarray, float]] = field(repr=False, default_factory=list)


@dataclass
class Simplex:
    vertices: np.ndarray
    fitness: np.ndarray

    def order(self) -> None:
        idx = np.argsort(self.fitness, kind="stable")
        self.vertices = self.vertices[idx]
        self.fitness = self.fitness[idx]

    @property
    def spread(self) -> float:
        best, worst = self.fitness[0], self.fitness[-1]
        return float((worst - best) / max(abs(best), 1e-12))


def threshold_schedule(rounds: Sequence[float], steps: Sequence[int], iteration: int) -> float:
    """Relative threshold in force at ``iteration`` (0-based); the last round persists."""
    if len(rounds) != len(steps):
        raise ValueError("one step count per threshold round")
    edge = 0
    for tau, n in zip(rounds, steps):
        edge += n
        if iteration < edge:
            return tau
    return rounds[-1]


def nmta_minimize(fun: Callable[[np.ndarray], float], x0, bounds, budget: int = 100,
                  xi: float = 0.15, thresholds: Sequence[float] = (0.2, 0.1, 0.05, 0.0),
                  steps: Sequence[int] = (14, 12, 10, 8), initial_step: float = 0.1,
                  shift_scale: float = 0.1, tol: float = 1e-4, seed: int = 0) -> NMTAResult:
    """Minimise ``fun`` over a box.

    Each iteration is a threshold-accepting random shift with probability ``xi``
    and a Nelder-Mead move otherwise. Relative thresholds (fractions of the best
    fitness) also loosen the Nelder-Mead acceptance tests. Stops after
    ``budget`` iterations or once the relative fitness spread of the simplex is
    below ``tol`` while no threshold applies.
    """
    if budget < 1:
        raise ValueError("budget must be at least one iteration")
    if any(b > a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be non-increasing")
    box = np.asarray(bounds, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    n = x0.size
    coef = NMCoefficients.adaptive(n)
    rng = np.random.default_rng(seed)
    history: list[tuple[np.ndarray, float]] = []
    best = [x0.copy(), math.inf]

    def evaluate(x: np.ndarray) -> tuple[np.ndarray, float]:
        x = np.clip(x, lo, hi)
        f = float(fun(x))
        if not math.isfinite(f):
            f = PENALTY
        history.append((x.copy(), f))
        if f < best[1]:
            best[0], best[1] = x.copy(), f
        return x, f

    verts = [x0]
    for j in range(n):
        v = x0.copy()
        step = initial_step * (hi[j] - lo[j])
        v[j] = v[j] + step if v[j] + step <= hi[j] else v[j] - step
        verts.append(v)
    evaluated = [evaluate(v) for v in verts]
    simplex = Simplex(np.array([v for v, _ in evaluated]), np.array([f for _, f in evaluated]))
    simplex.order()

    trace: list[TraceRow] = []
    converged = False
    for it in range(budget):
        tau = threshold_schedule(thresholds, steps, it)
        slack = tau * abs(simplex.fitness[0])
        if rng.random() < xi:
            step_name = _ta_step(simplex, evaluate, rng, slack, shift_scale, lo, hi)
        else:
            step_name = _nm_step(simplex, evaluate, coef, slack)
        simplex.order()
        trace.append(TraceRow(it, step_name, tau, best[1], simplex.fitness.tolist(),
                              simplex.spread))
        if tau == 0 and simplex.spread < tol:
            converged = True
            break
    return NMTAResult(best[0], best[1], trace, len(history), converged, history)


def _ta_step(simplex: Simplex, evaluate, rng, slack, scale, lo, hi) -> str:
    i = int(rng.integers(len(simplex.fitness)))
    j = int(rng.integers(simplex.vertices.shape[1]))
    magnitude = scale * abs(simplex.vertices[:, j].mean())
    if magnitude == 0:
        magnitude = scale * (hi[j] - lo[j])
    candidate = simplex.vertices[i].copy()
    candidate[j] += rng.uniform(-1.0, 1.0) * magnitude
    x, f = evaluate(candidate)
    if f - simplex.fitness[i] <= slack:
        simplex.vertices[i], simplex.fitness[i] = x, f
        return "shift"
    return "shift-rejected"


def _nm_step(simplex: Simplex, evaluate, coef: NMCoefficients, slack: float) -> str:
    v, f = simplex.vertices, simplex.fitness
    centroid = v[:-1].mean(axis=0)
    worst = v[-1]

    def replace_worst(x, fx):
        v[-1], f[-1] = x, fx

    xr, fr = evaluate(centroid + coef.reflection * (centroid - worst))
    if fr < f[0]:
        xe, fe = evaluate(centroid + coef.expansion * (xr - centroid))
        if fe < fr:
            replace_worst(xe, fe)
            return "expand"
        replace_worst(xr, fr)
        return "reflect"
    if fr < f[-2] + slack:
        replace_worst(xr, fr)
        return "reflect"
    if fr < f[-1]:
        xc, fc = evaluate(centroid + coef.contraction * (xr - centroid))
        if fc <= fr + slack:
            replace_worst(xc, fc)
            return "contract-out"
    else:
        xc, fc = evaluate(centroid + coef.contraction * (worst - centroid))
        if fc < f[-1] + slack:
            replace_worst(xc, fc)
            return "contract-in"
    for i in range(1, len(f)):
        v[i], f[i] = evaluate(v[0] + coef.shrink * (v[i] - v[0]))
    return "shrink"


# -- confidence intervals ------------------------------------------------------

@dataclass(frozen=True)
class ParameterCI:
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    exposure: np.ndarray
    cov: np.ndarray


def exposure_matrix(theta_chain, moment_chain) -> np.ndarray:
    """B[i, j] = Cov(theta_i, m_j) / Var(m_j); zero-variance moments get zero exposure."""
    t = np.asarray(theta_chain, dtype=float)
    m = np.asarray(moment_chain, dtype=float)
    if t.shape[0] != m.shape[0] or t.shape[0] < 2:
        raise ValueError("chains must be aligned and hold at least two draws")
    tc = t - t.mean(axis=0)
    mc = m - m.mean(axis=0)
    cov = tc.T @ mc / (t.shape[0] - 1)
    var = mc.var(axis=0, ddof=1)
    flat = var <= 0
    if flat.any():
        log.warning("moments with zero variance get zero exposure: %s",
                    [MOMENT_NAMES[j] if m.shape[1] == len(MOMENT_NAMES) else j
                     for j in np.flatnonzero(flat)])
    out = np.zeros_like(cov)
    out[:, ~flat] = cov[:, ~flat] / var[~flat]
    return out


def parameter_confidence(theta_chain, moment_chain, moment_cov, theta_hat,
                         z: float = 1.96) -> ParameterCI:
    B = exposure_matrix(theta_chain, moment_chain)
    sigma_m = np.asarray(moment_cov, dtype=float)
    cov = B @ sigma_m @ B.T
    cov = (cov + cov.T) / 2
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    est = np.asarray(theta_hat, dtype=float)
    return ParameterCI(est, est - z * sd, est + z * sd, B, cov)


def chain_arrays(chain: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([t for t, _ in chain]), np.array([m for _, m in chain]))


def moment_confidence(moments, moment_cov, z: float = 1.96) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(moments, dtype=float)
    sd = np.sqrt(np.clip(np.diag(np.asarray(moment_cov, dtype=float)), 0.0, None))
    return m - z * sd, m + z * sd


# -- end-to-end calibration ----------------------------------------------------

@dataclass
class Calibration:
    theta: ThetaParams
    fun: float
    result: NMTAResult
    confidence: ParameterCI | None
    empirical: MomentVector
    simulated: np.ndarray
    weight: WeightMatrix


def calibrate(empirical_returns, base_config, budget: int = 100, seed: int = 0,
              replications: int = 5, n_boot: int = 1000, window: int = 2000,
              bounds: dict[str, tuple[float, float]] = DEFAULT_BOUNDS,
              simulate: Callable[[ThetaParams, int], MomentVector] | None = None,
              **nmta_options) -> Calibration:
    """Fit theta to empirical returns: bootstrap W, then NMTA on the SMD objective."""
    r = np.asarray(empirical_returns, dtype=float)
    if r.size < window:
        shorter = max(10, r.size // 10)
        log.warning("only %d empirical returns; bootstrap window %d -> %d", r.size, window,
                    shorter)
        window = shorter
    weight = bootstrap_weight_matrix(r, window=window, n_boot=n_boot, seed=seed)
    empirical = compute_moments(r, r)
    objective = SMDObjective(simulate or session_simulator(base_config, r), empirical,
                             weight.weight, replications, seed)
    box = bounds_array(bounds)
    result = nmta_minimize(objective, base_config.theta.as_array(), box, budget=budget,
                           seed=seed, **nmta_options)
    theta = ThetaParams.from_array(result.x)
    simulated = np.mean(objective.simulated_moments(theta), axis=0)
    confidence = None
    if len(objective.chain) >= 2:
        t_chain, m_chain = chain_arrays(objective.chain)
        confidence = parameter_confidence(t_chain, m_chain, weight.cov, result.x)
    return Calibration(theta, result.fun, result, confidence, empirical, simulated, weight)
