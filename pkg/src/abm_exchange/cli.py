"""Command-line client. Runs in-process by default; ``--server URL`` sends the request to a running service."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .agents import THETA_NAMES
from .driver import SessionConfig, load_config, run_session, write_outputs
from .moments import MOMENT_NAMES, bootstrap_weight_matrix
from .schemas import (AnalyseRequest, AnalyseResponse, CalibrateRequest, CalibrateResponse,
                      FixedModel, MomentsRequest, MomentsResponse, SessionModel,
                      SimulateResponse, ThetaModel)
from .taq import HEADER

log = logging.getLogger("abm_exchange")


def _post(server: str, path: str, request, response_type):
    import httpx

    reply = httpx.post(server.rstrip("/") + path, json=request.model_dump(), timeout=None)
    if reply.status_code != 200:
        raise SystemExit(f"server error {reply.status_code}: {reply.text}")
    return response_type.model_validate(reply.json())


def _session_model(config: SessionConfig) -> SessionModel:
    return SessionModel(theta=ThetaModel(**vars(config.theta)),
                        fixed=FixedModel(**vars(config.fixed)), horizon=config.horizon,
                        seed=config.seed, n_fundamentalists=config.n_fundamentalists,
                        n_chartists=config.n_chartists)


def _config(args) -> SessionConfig:
    config = load_config(args.config) if args.config else SessionConfig()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "horizon", None) is not None:
        config = replace(config, horizon=args.horizon)
    return config


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return "" if x is None or not np.isfinite(x) else f"{x:.10g}"


def read_series(path: str | Path, level1: bool = False) -> np.ndarray:
    """Returns from a TAQ file (micro-price) or from the first column of a numeric CSV."""
    text = Path(path).read_text()
    first = text.split("\n", 1)[0]
    if next(csv.reader([first]), None) == list(HEADER):
        from .service import taq_returns

        return taq_returns(text, level1)
    values = []
    for row in csv.reader(text.splitlines()):
        if not row:
            continue
        try:
            values.append(float(row[0]))
        except ValueError:
            if values:
                raise
    return np.asarray(values, dtype=float)


# -- commands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = _config(args)
    out = Path(args.out)
    if args.server:
        resp = _post(args.server, "/simulate", _session_model(config), SimulateResponse)
        out.mkdir(parents=True, exist_ok=True)
        (out / "taq.csv").write_text(resp.taq, encoding="ascii", newline="")
        (out / "snapshots.csv").write_text(resp.snapshots, newline="")
        summary = {k: int(v) if float(v).is_integer() else v for k, v in resp.summary.items()}
        (out / "summary.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
    else:
        result = run_session(config)
        write_outputs(result, out)
        summary = result.summary
    print(f"{summary['total_orders']} orders, {summary['trades']} trades -> {out}")
    return 0


def cmd_moments(args) -> int:
    r = read_series(args.input, args.level1)
    ref = read_series(args.reference, args.level1).tolist() if args.reference else None
    req = MomentsRequest(returns=r.tolist(), reference=ref)
    if args.server:
        resp = _post(args.server, "/moments", req, MomentsResponse)
    else:
        from .service import handle_moments

        resp = handle_moments(req)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out, ["moment", "value"], ([k, _fmt(v)] for k, v in resp.moments.items()))
    if args.bootstrap:
        wm = bootstrap_weight_matrix(r, window=args.window, n_boot=args.bootstrap, seed=args.seed,
                                     reference=None if ref is None else np.asarray(ref))
        for name, matrix in (("covariance", wm.cov), ("weight", wm.weight)):
            _write_rows(out.with_name(f"{out.stem}_{name}.csv"), MOMENT_NAMES,
                        ([f"{v:.17g}" for v in row] for row in matrix))
    print(f"{resp.count} returns -> {out}")
    return 0


def cmd_calibrate(args) -> int:
    config = _config(args)
    req = CalibrateRequest(empirical=Path(args.empirical).read_text(), level1=not args.full_depth,
                           base=_session_model(config), iters=args.iters, seed=args.seed or 0,
                           replications=args.replications, bootstrap=args.bootstrap)
    if args.server:
        resp = _post(args.server, "/calibrate", req, CalibrateResponse)
    else:
        from .service import handle_calibrate

        resp = handle_calibrate(req)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "parameters.csv", ["parameter", "estimate", "lower", "upper"],
                ([p.name, _fmt(p.estimate), _fmt(p.lower), _fmt(p.upper)] for p in resp.theta))
    _write_rows(out / "moments.csv", ["moment", "empirical", "simulated", "lower", "upper"],
                ([m.name, _fmt(m.empirical), _fmt(m.simulated), _fmt(m.lower), _fmt(m.upper)]
                 for m in resp.moments))
    _write_rows(out / "trace.csv", ["iteration", "best", "worst", "threshold", "spread"],
                ([int(t["iteration"]), _fmt(t["best"]), _fmt(t["worst"]), _fmt(t["threshold"]),
                  _fmt(t["spread"])] for t in resp.trace))
    print(f"objective {resp.objective:.6g} after {resp.evaluations} evaluations -> {out}")
    return 0


def parse_grid(text: str) -> dict[str, list[float]]:
    """``name = v1, v2, ...`` per line, one line per free parameter."""
    grid = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, values = line.partition("=")
        key = key.strip()
        if not sep or key not in THETA_NAMES:
            raise ValueError(f"grid line {lineno}: expected <parameter> = v1, v2, ...")
        grid[key] = [float(v) for v in values.split(",") if v.strip()]
    missing = set(THETA_NAMES) - set(grid)
    if missing:
        raise ValueError(f"grid is missing {sorted(missing)}")
    return grid


def cmd_sensitivity(args) -> int:
    from .analysis.sensitivity import run_sensitivity, write_grid

    config = replace(_config(args), horizon=args.horizon)
    values = parse_grid(Path(args.grid).read_text()) if args.grid else None
    grid = run_sensitivity(config, values, seed=args.seed or 0, n_jobs=args.jobs)
    write_grid(grid, args.out, n_boot=args.boot, seed=args.seed or 0)
    print(f"{len(grid)} cells ({len(grid.failures)} failed) -> {args.out}")
    return 0


def cmd_analyse(args) -> int:
    req = AnalyseRequest(taq=Path(args.taq).read_text(),
                         empirical=Path(args.empirical).read_text() if args.empirical else None,
                         empirical_level1=not args.full_depth)
    out = Path(args.out)
    if args.server:
        resp = _post(args.server, "/analyse", req, AnalyseResponse)
        out.mkdir(parents=True, exist_ok=True)
        rows = [f.model_dump() for f in resp.facts]
        _write_rows(out / "stylised_facts.csv", list(rows[0]),
                    ([str(v) if v is not None else "" for v in r.values()] for r in rows))
    else:
        from .service import handle_analyse

        resp = handle_analyse(req, str(out))
    for f in resp.facts:
        print(f"{f.dataset}: kurtosis={_fmt(f.kurtosis)} order_flow_acf1={_fmt(f.order_flow_acf1)} "
              f"depth_decays={f.depth_decays} impact_slopes={_fmt(f.buyer_slope)}/"
              f"{_fmt(f.seller_slope)}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("abm_exchange.service:app", host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abm-exchange", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def client(sp):
        sp.add_argument("--server", help="base URL of a running service")

    s = sub.add_parser("simulate", help="run one trading session")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--horizon", type=float)
    s.add_argument("--out", required=True)
    client(s)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("moments", help="moment vector of a return series")
    s.add_argument("--in", dest="input", required=True, help="TAQ file or one-column CSV")
    s.add_argument("--reference")
    s.add_argument("--out", required=True)
    s.add_argument("--level1", action="store_true", help="read TAQ input as level-1 quotes")
    s.add_argument("--bootstrap", type=int, default=0, help="replicates for covariance/weight")
    s.add_argument("--window", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    client(s)
    s.set_defaults(fn=cmd_moments)

    s = sub.add_parser("calibrate", help="fit the free parameters to empirical TAQ data")
    s.add_argument("--empirical", required=True)
    s.add_argument("--config")
    s.add_argument("--iters", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--replications", type=int, default=5)
    s.add_argument("--bootstrap", type=int, default=1000)
    s.add_argument("--full-depth", action="store_true",
                   help="empirical file is a full-depth TAQ rather than level-1 quotes")
    s.add_argument("--out", required=True)
    client(s)
    s.set_defaults(fn=cmd_calibrate)

    s = sub.add_parser("sensitivity", help="full-factorial parameter grid")
    s.add_argument("--config")
    s.add_argument("--grid", help="file of '<parameter> = v1, v2, ...' lines")
    s.add_argument("--horizon", type=float, default=60.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--boot", type=int, default=1000, help="correlation bootstrap resamples")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sensitivity)

    s = sub.add_parser("analyse", help="stylised-fact and price-impact report")
    s.add_argument("--taq", required=True)
    s.add_argument("--empirical")
    s.add_argument("--full-depth", action="store_true",
                   help="empirical file is a full-depth TAQ rather than level-1 quotes")
    s.add_argument("--out", required=True)
    client(s)
    s.set_defaults(fn=cmd_analyse)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
