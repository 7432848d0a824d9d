"""Calibration moments of a tick-by-tick return series and their bootstrap weights.

The nine moments, in their fixed order: mean, standard deviation, raw kurtosis,
two-sample KS distance to a reference sample, Hurst exponent (rescaled range),
GPH long-memory parameter of |r|, ADF t-statistic, GARCH(1,1) alpha+beta, and
a modified Hill tail index.
"""
from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

log = logging.getLogger(__name__)

MOMENT_NAMES = ("mean", "stdev", "kurtosis", "ks", "hurst", "gph", "adf", "garch_sum", "hill")


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class MomentVector:
    mean: float
    stdev: float
    kurtosis: float
    ks: float
    hurst: float
    gph: float
    adf: float
    garch_sum: float
    hill: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "MomentVector":
        values = list(values)
        if len(values) != len(MOMENT_NAMES):
            raise ValueError(f"expected {len(MOMENT_NAMES)} moments, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def log_returns(prices) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    if p.size < 2:
        raise EstimatorError("need at least two prices")
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise EstimatorError("prices must be finite and strictly positive")
    return np.diff(np.log(p))


def basic_moments(r) -> tuple[float, float, float]:
    """Sample mean, sample stdev (n-1) and raw (Pearson) kurtosis."""
    x = np.asarray(r, dtype=float)
    if x.size < 4:
        raise EstimatorError("need at least 4 observations")
    d = x - x.mean()
    m2 = np.mean(d**2)
    if m2 == 0:
        raise EstimatorError("zero variance: kurtosis undefined")
    return float(x.mean()), float(x.std(ddof=1)), float(np.mean(d**4) / m2**2)


def ks_statistic(x, y) -> float:
    """Sup distance between the two empirical CDFs."""
    a = np.sort(np.asarray(x, dtype=float))
    b = np.sort(np.asarray(y, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EstimatorError("KS needs two nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def gph_estimate(x, power: float = 0.5) -> float:
    """Log-periodogram estimate of d over the first floor(n**power) Fourier frequencies."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 128:
        raise EstimatorError("GPH needs at least 128 observations")
    m = int(math.floor(n**power))
    j = np.arange(1, m + 1)
    w = 2 * np.pi * j / n
    periodogram = np.abs(np.fft.fft(x - x.mean())[1:m + 1]) ** 2 / (2 * np.pi * n)
    if np.any(periodogram <= 0):
        raise EstimatorError("zero periodogram ordinate")
    regressor = -2 * np.log(2 * np.sin(w / 2))
    d = np.polyfit(regressor, np.log(periodogram), 1)[0]
    return float(np.clip(d, -0.5, 0.5))


def adf_statistic(y) -> float:
    """ADF t-statistic with a constant and floor((n-1)**(1/3)) lagged differences."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n < 20:
        raise EstimatorError("ADF needs at least 20 observations")
    p = int(math.floor((n - 1) ** (1 / 3)))
    dy = np.diff(y)
    target = dy[p:]
    cols = [np.ones_like(target), y[p:-1]]
    cols += [dy[p - i:-i] for i in range(1, p + 1)]
    X = np.column_stack(cols)
    beta, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        raise EstimatorError("singular ADF regression")
    resid = target - X @ beta
    dof = X.shape[0] - X.shape[1]
    s2 = resid @ resid / dof
    xtx_inv = np.linalg.inv(X.T @ X)
    se = math.sqrt(s2 * xtx_inv[1, 1])
    if se == 0:
        raise EstimatorError("singular ADF regression")
    return float(beta[1] / se)


def rescaled_range(x, window: int) -> float:
    """Mean R/S over the non-overlapping blocks of length ``window``."""
    blocks = np.asarray(x, dtype=float)[: (len(x) // window) * window].reshape(-1, window)
    dev = blocks - blocks.mean(axis=1, keepdims=True)
    z = np.cumsum(dev, axis=1)
    r = z.max(axis=1) - z.min(axis=1)
    s = blocks.std(axis=1)
    ok = s > 0
    if not ok.any():
        return float("nan")
    return float(np.mean(r[ok] / s[ok]))


def hurst_exponent(x, min_window: int = 16) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 256:
        raise EstimatorError("Hurst needs at least 256 observations")
    windows = []
    w = min_window
    while w <= n // 4:
        windows.append(w)
        w *= 2
    rs = np.array([rescaled_range(x, w) for w in windows])
    ok = np.isfinite(rs) & (rs > 0)
    if ok.sum() < 2:
        raise EstimatorError("degenerate series for R/S")
    slope = np.polyfit(np.log(np.array(windows)[ok]), np.log(rs[ok]), 1)[0]
    return float(np.clip(slope, 0.0, 1.0))


# -- GARCH(1,1) --------------------------------------------------------------

@dataclass(frozen=True)
class GarchFit:
    omega: float
    alpha: float
    beta: float
    loglik: float
    converged: bool

    @property
    def persistence(self) -> float:
        return self.alpha + self.beta


def garch_variance(e2: np.ndarray, omega: float, alpha: float, beta: float,
                   initial: float) -> np.ndarray:
    """Conditional variances h_t = omega + alpha*e_{t-1}^2 + beta*h_{t-1}, h_0 = initial."""
    drive = np.empty_like(e2)
    drive[0] = initial
    drive[1:] = omega + alpha * e2[:-1]
    return lfilter([1.0], [1.0, -beta], drive)


def _garch_nll(params: np.ndarray, e2: np.ndarray, var0: float) -> float:
    w, a, b = params
    if w <= 0 or a < 0 or b < 0 or a + b >= 0.9999:
        return 1e300
    h = garch_variance(e2, w * var0, a, b, var0)
    if np.any(h <= 0):
        return 1e300
    return 0.5 * float(np.sum(np.log(h) + e2 / h))


def fit_garch(r, start: tuple[float, float] = (0.05, 0.80)) -> GarchFit:
    """Gaussian QMLE of GARCH(1,1) on demeaned returns by bounded Nelder-Mead."""
    x = np.asarray(r, dtype=float)
    if x.size < 500:
        raise EstimatorError("GARCH needs at least 500 observations")
    e = x - x.mean()
    e2 = e * e
    var0 = float(e2.mean())
    if var0 == 0:
        return GarchFit(0.0, 0.0, 0.0, float("nan"), False)
    # omega is searched in units of the sample variance
    a0, b0 = start
    x0 = np.array([1 - a0 - b0, a0, b0])
    f0 = _garch_nll(x0, e2, var0)
    res = minimize(_garch_nll, x0, args=(e2, var0), method="Nelder-Mead",
                   bounds=[(1e-8, 10.0), (0.0, 1.0), (0.0, 1.0)],
                   options=dict(xatol=1e-5, fatol=1e-6, maxiter=2000))
    w, a, b = res.x
    converged = bool(res.success) and res.fun <= f0 and res.fun < 1e299
    if not converged:
        log.debug("GARCH fit did not converge: %s", res.message)
    loglik = -res.fun - 0.5 * e.size * math.log(2 * math.pi)
    return GarchFit(float(w * var0), float(a), float(b), float(loglik), converged)


def garch_sum(r) -> float:
    """alpha_1 + beta_1; a non-converged fit still returns its best point (see fit_garch)."""
    return fit_garch(r).persistence


# -- tail index --------------------------------------------------------------

def _tail(x, percentile: float) -> np.ndarray:
    a = np.abs(np.asarray(x, dtype=float))
    cut = np.percentile(a, percentile)
    tail = np.sort(a[(a > cut) & (a > 0)])
    return tail


def hill_classical(x, percentile: float = 95.0) -> float:
    a = np.abs(np.asarray(x, dtype=float))
    cut = np.percentile(a, percentile)
    tail = a[a > cut]
    if tail.size < 50 or cut <= 0:
        raise EstimatorError("too few tail observations")
    return float(tail.size / np.sum(np.log(tail / cut)))


def hill_modified(x, percentile: float = 95.0, lo: float = 0.1, hi: float = 20.0,
                  tol: float = 1e-10) -> float:
    """Tail index of |x| above ``percentile`` from the truncated-Pareto likelihood equation.

    Solves mean(ln X) = 1/a + (ln X_l X_l^-a - ln X_r X_r^-a) / (X_l^-a - X_r^-a)
    with X_r the smallest and X_l the largest tail value, by bisection on (lo, hi].
    """
    tail = _tail(x, percentile)
    if tail.size < 50:
        raise EstimatorError(f"too few tail observations ({tail.size})")
    # the equation is scale free; working in units of X_r avoids under/overflow
    z = np.log(tail / tail[0])
    target = z.mean()
    zl = z[-1]
    if zl <= 0:
        raise EstimatorError("degenerate tail")

    def g(a: float) -> float:
        # ln X_r = 0 here, so the X_r term drops out of the numerator
        el = math.exp(-a * zl)
        return 1 / a + zl * el / (el - 1) - target

    g_lo, g_hi = g(lo), g(hi)
    if g_lo * g_hi > 0:
        raise EstimatorError("no sign change of the Hill equation on the bracket")
    a, b = lo, hi
    while b - a > tol * max(1.0, a):
        mid = 0.5 * (a + b)
        g_mid = g(mid)
        if g_mid == 0:
            return mid
        if (g_mid > 0) == (g_lo > 0):
            a, g_lo = mid, g_mid
        else:
            b = mid
    return 0.5 * (a + b)


# -- the full vector ---------------------------------------------------------

_ESTIMATORS = {
    "hurst": hurst_exponent,
    "gph": lambda r: gph_estimate(np.abs(r)),
    "adf": adf_statistic,
    "garch_sum": garch_sum,
    "hill": hill_modified,
}


def compute_moments(r, reference, strict: bool = True) -> MomentVector:
    """All nine moments of ``r``; KS is measured against ``reference``.

    With ``strict=False`` an estimator that cannot run on this series yields NaN.
    """
    r = np.asarray(r, dtype=float)
    values: dict[str, float] = {}
    try:
        values["mean"], values["stdev"], values["kurtosis"] = basic_moments(r)
    except EstimatorError:
        if strict:
            raise
        values.update(mean=float(r.mean()) if r.size else float("nan"),
                      stdev=float(r.std(ddof=1)) if r.size > 1 else float("nan"),
                      kurtosis=float("nan"))
    try:
        values["ks"] = ks_statistic(r, reference)
    except EstimatorError:
        if strict:
            raise
        values["ks"] = float("nan")
    for name, fn in _ESTIMATORS.items():
        try:
            values[name] = fn(r)
        except (EstimatorError, np.linalg.LinAlgError, FloatingPointError) as exc:
            if strict:
                raise
            log.debug("%s unavailable: %s", name, exc)
            values[name] = float("nan")
    return MomentVector(**values)


# -- bootstrap weight matrix -------------------------------------------------

# float64 keeps about 16 digits, so a weight of norm 1/RIDGE_EPS still leaves
# room for a 1e-6 residual; a smaller ridge would drown it in rounding
RIDGE_EPS = 1e-8
CONDITION_LIMIT = 1e8


@dataclass(frozen=True)
class WeightMatrix:
    cov: np.ndarray
    weight: np.ndarray
    ridge: float
    replicates: np.ndarray

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.cov))


def moving_block_indices(n: int, window: int, rng: np.random.Generator) -> np.ndarray:
    n_blocks = -(-n // window)
    starts = rng.integers(0, n - window + 1, size=n_blocks)
    idx = (starts[:, None] + np.arange(window)[None, :]).ravel()
    return idx[:n]


def _scales(cov: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    d[d == 0] = 1.0
    return d


def regularized_inverse(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse of ``cov`` computed on the correlation scale.

    The moments differ by many orders of magnitude, so the raw condition number
    mostly reflects units. The matrix is standardized first; if the standardized
    matrix is still ill conditioned, ``RIDGE_EPS * tr/k`` (of the standardized
    matrix) goes on its diagonal. Without a ridge the result equals ``inv(cov)``.
    Returns the weight and the ridge on the standardized scale.
    """
    k = cov.shape[0]
    d = _scales(cov)
    corr = cov / np.outer(d, d)
    ridge = 0.0
    if np.linalg.cond(corr) > CONDITION_LIMIT:
        ridge = RIDGE_EPS * float(np.trace(corr)) / k
    inner = np.linalg.pinv(corr + ridge * np.eye(k), hermitian=True)
    weight = inner / np.outer(d, d)
    return (weight + weight.T) / 2, ridge


RESIDUAL_BOUND = 1e-6


def weight_residual(cov: np.ndarray, weight: np.ndarray, ridge: float) -> float:
    """Largest entry of ``V' (W cov) V - I`` on the well-conditioned subspace.

    Both matrices are taken to the correlation scale. ``V`` spans the
    eigenvectors of the standardized covariance with eigenvalue at least
    ``RIDGE_EPS * tr/k / RESIDUAL_BOUND``; there a ridge of at most
    ``RIDGE_EPS * tr/k`` shifts ``W cov`` from the identity by less than
    ``RESIDUAL_BOUND``. Projecting onto ``V`` drops rounding noise that the
    large eigenvalues of ``W`` amplify in the discarded directions.
    """
    k = cov.shape[0]
    d = _scales(cov)
    corr = cov / np.outer(d, d)
    inner = weight * np.outer(d, d)
    vals, vecs = np.linalg.eigh(corr)
    floor = max(ridge, RIDGE_EPS * float(np.trace(corr)) / k) / RESIDUAL_BOUND
    keep = vecs[:, vals >= floor]
    if keep.shape[1] == 0:
        return 0.0
    err = keep.T @ inner @ corr @ keep - np.eye(keep.shape[1])
    return float(np.abs(err).max())


def bootstrap_weight_matrix(r, window: int = 2000, n_boot: int = 1000, seed: int = 0,
                            reference=None) -> WeightMatrix:
    """Moving-block bootstrap covariance of the moments and its (regularized) inverse.

    KS of each replicate is taken against ``reference`` (default: ``r`` itself).
    """
    r = np.asarray(r, dtype=float)
    if r.size < window:
        raise EstimatorError(f"series of {r.size} is shorter than the block window {window}")
    reference = r if reference is None else np.asarray(reference, dtype=float)
    rng = np.random.default_rng(seed)
    reps = np.empty((n_boot, len(MOMENT_NAMES)))
    for i in range(n_boot):
        sample = r[moving_block_indices(r.size, window, rng)]
        reps[i] = compute_moments(sample, reference, strict=False).as_array()
    finite = np.all(np.isfinite(reps), axis=1)
    if finite.sum() < 2:
        raise EstimatorError("fewer than two usable bootstrap replicates")
    if not finite.all():
        log.warning("dropping %d bootstrap replicates with undefined moments",
                    int((~finite).sum()))
    cov = np.cov(reps[finite], rowvar=False)
    cov = (cov + cov.T) / 2
    weight, ridge = regularized_inverse(cov)
    return WeightMatrix(cov, weight, ridge, reps)
