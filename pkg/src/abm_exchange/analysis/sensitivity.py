"""Full-factorial sensitivity grid over the five free parameters."""
from __future__ import annotations

import csv
import itertools
import logging
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from ..agents import THETA_NAMES, ThetaParams
from ..calibration import DEFAULT_BOUNDS
from ..driver import SessionConfig, run_session
from ..moments import MOMENT_NAMES, compute_moments, log_returns
from .facts import mid_price_series, micro_price_series

log = logging.getLogger(__name__)

GRID_POINTS = 5
PRICES = ("mid", "micro")


def default_grid(bounds: Mapping[str, tuple[float, float]] = DEFAULT_BOUNDS,
                 points: int = GRID_POINTS) -> dict[str, list[float]]:
    """Evenly spaced values across each parameter's box."""
    return {name: np.linspace(*bounds[name], points).tolist() for name in THETA_NAMES}


@dataclass(frozen=True)
class Cell:
    index: tuple[int, ...]
    theta: ThetaParams
    mid: np.ndarray
    micro: np.ndarray
    error: str | None = None

    def moments(self, price: str) -> np.ndarray:
        return self.mid if price == "mid" else self.micro


def _nan_moments() -> np.ndarray:
    return np.full(len(MOMENT_NAMES), np.nan)


def run_cell(config: SessionConfig, index: tuple[int, ...], theta: ThetaParams,
             reference: np.ndarray) -> Cell:
    """One session from an empty book; failures are recorded on the cell."""
    try:
        result = run_session(replace(config, theta=theta))
        out = []
        for series in (mid_price_series, micro_price_series):
            r = log_returns(series(result.snapshots))
            out.append(compute_moments(r, reference, strict=False).as_array())
        return Cell(index, theta, out[0], out[1])
    except Exception as exc:
        log.warning("cell %s failed: %s", index, exc)
        return Cell(index, theta, _nan_moments(), _nan_moments(), f"{type(exc).__name__}: {exc}")


@dataclass
class SensitivityGrid:
    values: dict[str, list[float]]
    cells: list[Cell]

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def failures(self) -> list[Cell]:
        return [c for c in self.cells if c.error is not None]

    def matrix(self, price: str = "micro") -> np.ndarray:
        return np.array([c.moments(price) for c in self.cells])

    def thetas(self) -> np.ndarray:
        return np.array([c.theta.as_array() for c in self.cells])

    def marginal(self, param: str, price: str = "micro") -> dict[float, np.ndarray]:
        """Moments of every cell grouped by the value of ``param``."""
        j = THETA_NAMES.index(param)
        out: dict[float, list[np.ndarray]] = {v: [] for v in self.values[param]}
        for c in self.cells:
            out[self.values[param][c.index[j]]].append(c.moments(price))
        return {v: np.array(rows) for v, rows in out.items()}

    def surface(self, p1: str, p2: str, moment: str, price: str = "micro") -> np.ndarray:
        """Mean of ``moment`` over the other parameters on the (p1, p2) value grid."""
        i, j = THETA_NAMES.index(p1), THETA_NAMES.index(p2)
        k = MOMENT_NAMES.index(moment)
        acc = np.zeros((len(self.values[p1]), len(self.values[p2])))
        cnt = np.zeros_like(acc)
        for c in self.cells:
            v = c.moments(price)[k]
            if np.isfinite(v):
                acc[c.index[i], c.index[j]] += v
                cnt[c.index[i], c.index[j]] += 1
        with np.errstate(invalid="ignore"):
            return acc / cnt

    def surface_counts(self, p1: str, p2: str) -> np.ndarray:
        i, j = THETA_NAMES.index(p1), THETA_NAMES.index(p2)
        cnt = np.zeros((len(self.values[p1]), len(self.values[p2])), dtype=int)
        for c in self.cells:
            cnt[c.index[i], c.index[j]] += 1
        return cnt

    def correlations(self, price: str = "micro", n_boot: int = 1000,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Parameter-moment correlations with bootstrap (2.5%, 97.5%) bands over cells."""
        t, m = self.thetas(), self.matrix(price)
        point = _correlation(t, m)
        rng = np.random.default_rng(seed)
        reps = np.empty((n_boot,) + point.shape)
        for b in range(n_boot):
            idx = rng.integers(0, len(t), len(t))
            reps[b] = _correlation(t[idx], m[idx])
        lo, hi = np.nanpercentile(reps, [2.5, 97.5], axis=0) if n_boot else (point, point)
        return point, lo, hi


def _correlation(t: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Pearson correlation of each parameter with each moment; constant columns give 0."""
    out = np.zeros((t.shape[1], m.shape[1]))
    for j in range(m.shape[1]):
        ok = np.isfinite(m[:, j])
        if ok.sum() < 3:
            continue
        y = m[ok, j] - m[ok, j].mean()
        sy = np.sqrt((y * y).sum())
        if sy == 0:
            continue
        x = t[ok] - t[ok].mean(axis=0)
        sx = np.sqrt((x * x).sum(axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, j] = np.where(sx > 0, (x * y[:, None]).sum(axis=0) / (sx * sy), 0.0)
    return out


def run_sensitivity(base: SessionConfig, values: Mapping[str, Sequence[float]] | None = None,
                    seed: int = 0, reference=None, n_jobs: int = 1) -> SensitivityGrid:
    """Run one session per grid cell, all with the same seed.

    ``reference`` is the return series the KS moment is measured against; by
    default the micro-price returns of ``base`` itself.
    """
    values = {k: list(v) for k, v in (values or default_grid()).items()}
    if set(values) != set(THETA_NAMES):
        raise ValueError(f"grid must cover exactly {THETA_NAMES}")
    config = replace(base, seed=seed)
    if reference is None:
        reference = log_returns(micro_price_series(run_session(config).snapshots))
    reference = np.asarray(reference, dtype=float)
    shape = [range(len(values[n])) for n in THETA_NAMES]
    jobs = []
    for index in itertools.product(*shape):
        theta = ThetaParams(*(values[n][i] for n, i in zip(THETA_NAMES, index)))
        jobs.append(delayed(run_cell)(config, index, theta, reference))
    cells = Parallel(n_jobs=n_jobs)(jobs)
    grid = SensitivityGrid(values, list(cells))
    if grid.failures:
        log.warning("%d of %d cells failed", len(grid.failures), len(grid))
    return grid


# -- output ------------------------------------------------------------------

def _write(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def write_grid(grid: SensitivityGrid, out_dir: str | Path, n_boot: int = 1000,
               seed: int = 0) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = list(THETA_NAMES) + [f"{p}_{m}" for p in PRICES for m in MOMENT_NAMES] + ["error"]
    _write(out / "cells.csv", header,
           ([_num(v) for v in c.theta.as_array()]
            + [_num(v) for v in np.concatenate([c.mid, c.micro])] + [c.error or ""]
            for c in grid.cells))
    rows = []
    for price in PRICES:
        for name in THETA_NAMES:
            for value, block in grid.marginal(name, price).items():
                with warnings.catch_warnings():
                    # all-NaN columns (failed cells) are expected here
                    warnings.simplefilter("ignore", RuntimeWarning)
                    mean = np.nanmean(block, axis=0) if len(block) else _nan_moments()
                rows.append([price, name, _num(value), len(block)] + [_num(v) for v in mean])
    _write(out / "marginals.csv", ["price", "parameter", "value", "cells"] + list(MOMENT_NAMES),
           rows)
    surf_rows = []
    for price in PRICES:
        for p1, p2 in itertools.combinations(THETA_NAMES, 2):
            for moment in MOMENT_NAMES:
                s = grid.surface(p1, p2, moment, price)
                for i, v1 in enumerate(grid.values[p1]):
                    for j, v2 in enumerate(grid.values[p2]):
                        surf_rows.append([price, p1, p2, moment, _num(v1), _num(v2), _num(s[i, j])])
    _write(out / "surfaces.csv", ["price", "x", "y", "moment", "x_value", "y_value", "mean"],
           surf_rows)
    corr_rows = []
    for price in PRICES:
        point, lo, hi = grid.correlations(price, n_boot, seed)
        for i, name in enumerate(THETA_NAMES):
            for j, moment in enumerate(MOMENT_NAMES):
                corr_rows.append([price, name, moment, _num(point[i, j]), _num(lo[i, j]),
                                  _num(hi[i, j])])
    _write(out / "correlations.csv", ["price", "parameter", "moment", "corr", "lower", "upper"],
           corr_rows)
