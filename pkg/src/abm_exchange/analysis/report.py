"""Stylised-fact report: CSV tables plus SVG figures rebuilt from TAQ files."""
from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..moments import MOMENT_NAMES, compute_moments, log_returns
from ..taq import TaqRecord, read_taq
from .facts import (AnalysisError, depth_profile, lee_ready_sign, mid_price_series,
                    micro_price_series, order_flow_acf, price_impact, return_acf, tail_fit)
from .replay import Replay, replay_taq

log = logging.getLogger(__name__)

RETURN_LAGS = 100
ORDER_FLOW_LAGS = 500


@dataclass
class FactSummary:
    dataset: str
    returns: int
    trades: int
    kurtosis: float = math.nan
    return_acf1: float = math.nan
    order_flow_acf1: float = math.nan
    depth_decays: bool | None = None
    buyer_slope: float = math.nan
    seller_slope: float = math.nan
    upper_tail: float = math.nan
    lower_tail: float = math.nan
    lee_ready_agreement: float = math.nan
    unsigned: int = 0
    notes: list[str] = field(default_factory=list)


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    x = float(x)
    return "" if not math.isfinite(x) else f"{x:.10g}"


def _write(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class Report:
    """Accumulates per-dataset tables and figures in one output directory."""

    def __init__(self, out_dir: str | Path) -> None:
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.summaries: list[FactSummary] = []
        self.moment_rows: list[list[str]] = []

    def add(self, name: str, replay: Replay, reference: np.ndarray | None = None,
            full_depth: bool = True) -> FactSummary:
        micro = log_returns(micro_price_series(replay.snapshots))
        mid = log_returns(mid_price_series(replay.snapshots))
        summary = FactSummary(name, int(micro.size), len(replay.trades))
        ref = micro if reference is None else reference
        for price, r in (("mid", mid), ("micro", micro)):
            m = compute_moments(r, ref, strict=False) if r.size > 1 else None
            values = m.as_array() if m is not None else np.full(len(MOMENT_NAMES), np.nan)
            self.moment_rows.append([name, price, str(r.size)] + [_num(v) for v in values])
            if price == "micro":
                summary.kurtosis = float(values[MOMENT_NAMES.index("kurtosis")])

        self._returns(name, micro, summary)
        self._tails(name, micro, summary)
        self._trades(name, replay, summary)
        if full_depth:
            self._depth(name, replay, summary)
        self.summaries.append(summary)
        return summary

    def _returns(self, name: str, r: np.ndarray, s: FactSummary) -> None:
        lags = min(RETURN_LAGS, r.size - 1)
        if lags < 1:
            s.notes.append("too few returns for autocorrelations")
            return
        acf = return_acf(r, lags)
        s.return_acf1 = float(acf.returns[0])
        _write(self.out / f"return_acf_{name}.csv", ["lag", "acf", "abs_acf", "band"],
               ([k + 1, _num(a), _num(b), _num(acf.band)]
                for k, (a, b) in enumerate(zip(acf.returns, acf.absolute))))
        self._plot_acf(f"return_acf_{name}", acf.returns, acf.absolute, acf.band)

    def _tails(self, name: str, r: np.ndarray, s: FactSummary) -> None:
        try:
            fit = tail_fit(r)
        except AnalysisError as exc:
            s.notes.append(f"tail fit: {exc}")
            return
        s.upper_tail, s.lower_tail = fit.upper.alpha, fit.lower.alpha
        rows = []
        for side, t in (("upper", fit.upper), ("lower", fit.lower)):
            rows += [[side, _num(e), _num(q)] for e, q in zip(t.empirical, t.theoretical)]
        _write(self.out / f"tail_qq_{name}.csv", ["tail", "empirical", "power_law"], rows)
        self._plot_qq(f"tail_qq_{name}", fit)

    def _trades(self, name: str, replay: Replay, s: FactSummary) -> None:
        trades = replay.trades
        if not trades:
            s.notes.append("no trades")
            return
        signs = np.array([t.sign for t in trades])
        inferred = lee_ready_sign([t.price for t in trades], [t.mid_before for t in trades])
        s.unsigned = inferred.skipped
        s.lee_ready_agreement = float(np.mean(inferred.signs == signs))
        try:
            flow = order_flow_acf(signs, ORDER_FLOW_LAGS)
        except AnalysisError as exc:
            s.notes.append(f"order flow: {exc}")
        else:
            s.order_flow_acf1 = float(flow[0])
            _write(self.out / f"order_flow_acf_{name}.csv", ["lag", "log10_lag", "acf"],
                   ([k + 1, _num(math.log10(k + 1)), _num(a)] for k, a in enumerate(flow)))
            self._plot_acf(f"order_flow_acf_{name}", flow, None, 3 / math.sqrt(signs.size))
        buyer, seller = price_impact(signs, [t.volume for t in trades],
                                     [t.mid_before for t in trades], [t.mid_after for t in trades])
        s.buyer_slope, s.seller_slope = buyer.slope(), seller.slope()
        rows = []
        for curve in (buyer, seller):
            for k in range(curve.count.size):
                rows.append([curve.side, _num(curve.edges[k]), _num(curve.edges[k + 1]),
                             int(curve.count[k]), _num(curve.volume[k]), _num(curve.impact[k]),
                             str(bool(curve.empty[k]))])
        _write(self.out / f"price_impact_{name}.csv",
               ["side", "bin_low", "bin_high", "trades", "mean_volume", "mean_impact", "empty"],
               rows)
        self._plot_impact(f"price_impact_{name}", (buyer, seller))

    def _depth(self, name: str, replay: Replay, s: FactSummary) -> None:
        profile = depth_profile(replay.snapshots)
        s.depth_decays = profile.decays()
        _write(self.out / f"depth_profile_{name}.csv", ["level", "bid", "ask"],
               ([k + 1, _num(b), _num(a)] for k, (b, a) in enumerate(zip(profile.bid,
                                                                         profile.ask))))
        fig, ax = _figure()
        levels = np.arange(1, profile.bid.size + 1)
        ax.plot(levels, profile.bid, marker="o", label="bid")
        ax.plot(levels, profile.ask, marker="s", label="ask")
        ax.set_xlabel("price level")
        ax.set_ylabel("mean volume")
        ax.legend()
        self._save(fig, f"depth_profile_{name}")

    # -- figures ---------------------------------------------------------------

    def _plot_acf(self, stem: str, a, b, band: float) -> None:
        fig, ax = _figure()
        lags = np.arange(1, len(a) + 1)
        ax.plot(lags, a, lw=0.8, label="acf")
        if b is not None:
            ax.plot(lags, b, lw=0.8, label="abs acf")
        ax.axhline(band, color="grey", ls="--", lw=0.6)
        ax.axhline(-band, color="grey", ls="--", lw=0.6)
        ax.set_xlabel("lag")
        ax.legend()
        self._save(fig, stem)

    def _plot_qq(self, stem: str, fit) -> None:
        fig, ax = _figure()
        for label, t in (("upper", fit.upper), ("lower", fit.lower)):
            ax.loglog(t.theoretical, t.empirical, ".", ms=3, label=f"{label} alpha={t.alpha:.2f}")
        ax.set_xlabel("power-law quantile")
        ax.set_ylabel("empirical quantile")
        ax.legend()
        self._save(fig, stem)

    def _plot_impact(self, stem: str, curves) -> None:
        fig, ax = _figure()
        for c in curves:
            ok = (c.count > 0) & (c.impact > 0)
            if ok.any():
                ax.loglog(c.volume[ok], c.impact[ok], marker="o", label=c.side)
        ax.set_xlabel("normalised volume")
        ax.set_ylabel("mean impact")
        if ax.get_legend_handles_labels()[0]:
            ax.legend()
        self._save(fig, stem)

    def _save(self, fig, stem: str) -> None:
        import matplotlib.pyplot as plt

        fig.savefig(self.out / f"{stem}.svg", format="svg", metadata={"Date": None})
        plt.close(fig)

    # -- tables ----------------------------------------------------------------

    def finish(self) -> list[FactSummary]:
        _write(self.out / "moments.csv", ["dataset", "price", "returns"] + list(MOMENT_NAMES),
               self.moment_rows)
        header = ["dataset", "returns", "trades", "kurtosis", "return_acf1", "order_flow_acf1",
                  "depth_decays", "buyer_impact_slope", "seller_impact_slope", "upper_tail_alpha",
                  "lower_tail_alpha", "lee_ready_agreement", "unsigned", "notes"]
        _write(self.out / "stylised_facts.csv", header,
               ([s.dataset, s.returns, s.trades, _num(s.kurtosis), _num(s.return_acf1),
                 _num(s.order_flow_acf1), _num(s.depth_decays), _num(s.buyer_slope),
                 _num(s.seller_slope), _num(s.upper_tail), _num(s.lower_tail),
                 _num(s.lee_ready_agreement), s.unsigned, "; ".join(s.notes)]
                for s in self.summaries))
        return self.summaries


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids keep the SVG output byte-stable
    plt.rcParams["svg.hashsalt"] = "abm-exchange"
    return plt.subplots(figsize=(6, 4))


def analyse(taq: str | Path | Sequence[TaqRecord], out_dir: str | Path,
            empirical: str | Path | Sequence[TaqRecord] | None = None,
            empirical_level1: bool = True) -> list[FactSummary]:
    """Write the stylised-fact bundle for a simulated TAQ file and optional empirical data."""
    sim_records = read_taq(taq) if isinstance(taq, (str, Path)) else list(taq)
    report = Report(out_dir)
    sim = replay_taq(sim_records)
    reference = None
    emp = None
    if empirical is not None:
        emp_records = (read_taq(empirical) if isinstance(empirical, (str, Path))
                       else list(empirical))
        emp = replay_taq(emp_records, level1=empirical_level1)
        reference = log_returns(micro_price_series(emp.snapshots))
    report.add("simulated", sim, reference)
    if emp is not None:
        report.add("empirical", emp, reference, full_depth=not empirical_level1)
    return report.finish()
