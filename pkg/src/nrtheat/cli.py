"""Command-line entry point ``nrt``.

Subcommands: ``forward``, ``scan``, ``probe``, ``duality-check``, ``report``.
Exit status is 0 on success, 2 on configuration or usage errors and 3 on
numerical failures or malformed inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .extension import BlowupMap, taylor_blowup_map
from .forward import SolverError
from .geometry import clearance, contains, pixel_grid
from .indicator import duality_oracle, sup_form, tikhonov_path
from .operators import DenseOperator, NormSurrogate, OperatorCache
from .scan import ScanAborted, read_result, run_scan, synthesize_data, write_result

__all__ = ["main", "duality_check", "render_report", "write_cauchy"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("nrtheat")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _parser():
    p = _Parser(prog="nrt", description="No-response test for heat-conductor cavities.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON run configuration (defaults: standard config)")
        s.add_argument("--output", help="output directory (overrides the config)")
        s.add_argument("--no-cache", action="store_true", help="do not use the operator cache")
        return s

    with_config("forward", "synthesize Cauchy data")
    s = with_config("scan", "run the test-domain scan")
    s.add_argument("--workers", type=int, help="parallel domains")
    s = with_config("probe", "Taylor-coefficient blow-up map")
    s.add_argument("--field", choices=("wtilde", "w"), default="wtilde",
                   help="data-side continuation or the synthetic field")
    s.add_argument("--time", type=float, default=0.5, help="probe time s")
    s.add_argument("--grid", type=int, default=8, help="points per axis of the sample grid")
    s.add_argument("--ray", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"),
                   help="sample a segment instead of a grid")
    s.add_argument("--n", type=int, default=6, help="points on the ray")
    s = with_config("duality-check", "sup form against the Tikhonov limit")
    s.add_argument("--size", type=int, default=20, help="synthetic operator size")
    s.add_argument("--cases", type=int, default=5)
    s = sub.add_parser("report", help="markdown summary of a scan directory")
    s.add_argument("result", help="scan result directory")
    s.add_argument("--output", help="report file (default: <result>/report.md)")
    return p


def _config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.standard()
    if getattr(args, "output", None):
        cfg = cfg.with_overrides(output=args.output)
    if getattr(args, "workers", None):
        cfg = cfg.with_overrides(workers=args.workers)
    return cfg


def _cache(args):
    return None if args.no_cache else OperatorCache()


def write_cauchy(cauchy, directory, extra=None):
    """``dirichlet.csv`` and ``neumann.csv`` (node rows, time columns) plus ``meta.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, arr in (("dirichlet", cauchy.dirichlet), ("neumann", cauchy.neumann)):
        np.savetxt(d / f"{name}.csv", arr, fmt="%.17g", delimiter=",")
    bd, grid = cauchy.boundary, cauchy.grid
    meta = {"nodes": bd.nodes.tolist(), "normals": bd.normals.tolist(),
            "weights": bd.weights.tolist(), "times": grid.nodes.tolist(),
            "T": grid.T, "nt": grid.nt, "layout": "rows are nodes, columns are times"}
    meta.update(extra or {})
    (d / "meta.json").write_text(json.dumps(meta, indent=1))


def cmd_forward(args):
    cfg = _config(args)
    data = synthesize_data(cfg, _cache(args))
    out = cfg.output
    write_cauchy(data.cauchy_u, out, {"field": "u", "noise_level": data.noise_level,
                                      "diagnostics": data.diagnostics,
                                      "files": {"w_neumann.csv": "flux of w = u - mu"},
                                      "config": cfg.to_dict()})
    np.savetxt(out / "w_neumann.csv", data.cauchy_w.neumann, fmt="%.17g", delimiter=",")
    print(f"wrote Cauchy data to {out}")


def cmd_scan(args):
    cfg = _config(args)
    result = run_scan(cfg, cache=_cache(args))
    write_result(result, cfg.output)
    m = result.metrics
    print(f"{m['n_positive']} positive, {m['n_negative']} negative, "
          f"{m['n_uncertain']} uncertain, {m['n_failed']} failed; "
          f"separation {m['separation_ratio']}, jaccard {m['jaccard']}")


def _probe_points(args, cfg):
    omega = cfg.omega
    if args.ray:
        x0, y0, x1, y1 = args.ray
        f = np.linspace(0.0, 1.0, args.n)
        pts = np.stack([x0 + f * (x1 - x0), y0 + f * (y1 - y0)], -1)
        return pts, None
    c = np.asarray(omega.center)
    r = omega.max_radius()
    g = pixel_grid((c[0] - r, c[0] + r, c[1] - r, c[1] + r), args.grid)
    return g.centers(), (g.ny, g.nx)


def cmd_probe(args):
    cfg = _config(args)
    ind = cfg.indicator
    rho = ind["rho"]
    pts, shape = _probe_points(args, cfg)
    valid = clearance(cfg.omega, pts) > rho
    if cfg.cavity is not None:
        valid &= ~contains(cfg.cavity, pts)
    if args.ray and not np.all(valid):
        raise ConfigError("ray points must lie in Omega_rho outside the cavity")
    data = synthesize_data(cfg, None if args.field == "w" else _cache(args))
    source = data.cauchy_w
    if args.field == "w":
        from .extension import difference_basis
        source = difference_basis(data.u_basis, data.mu_basis)
    sub = taylor_blowup_map(source, pts[valid], [args.time], rho, ind["m_max"], ind["ndirs"],
                            omega=cfg.omega)
    log_p = np.full((len(pts), 1), -np.inf)
    log_p[valid] = sub.log_P
    bmap = BlowupMap(pts, sub.times, log_p, None, dict(sub.meta, field=args.field,
                                                        eps=ind["eps"]))
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    bmap.to_csv(out / "blowup.csv")
    if shape is not None:
        bmap.to_pgm(out / "blowup.pgm", shape)
    print(f"wrote blow-up map ({int(valid.sum())} points) to {out}")


def duality_check(size=20, cases=5, seed=0):
    """Compare the sup form with the Tikhonov limit and the ellipsoid oracle.

    Operators are ``size x size`` with singular values from 1 down to 1e-2
    and unit weights; right-hand sides lie in their range. Returns a dict
    with per-case values and the maximal relative gaps.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(cases):
        U, _ = np.linalg.qr(rng.standard_normal((size, size)))
        V, _ = np.linalg.qr(rng.standard_normal((size, size)))
        s = np.logspace(0, -2, size)
        A = (U * s) @ V.T
        x = rng.standard_normal(size)
        b = A @ x
        ones = NormSurrogate(np.ones(size))
        op = DenseOperator(A, ones, ones)
        sup = sup_form(op, b, cutoff=1e-3).value
        alphas = 10.0 ** -np.arange(4, 17, dtype=float)
        limit = float(tikhonov_path(op, b, alphas, relative=True).solution_norms[-1])
        oracle = duality_oracle(A, b)
        rows.append({"sup_form": sup, "tikhonov_limit": limit, "oracle": oracle,
                     "gap_tikhonov": abs(sup - limit) / sup, "gap_oracle": abs(sup - oracle) / sup})
    return {"size": size, "cases": rows,
            "max_gap_tikhonov": max(r["gap_tikhonov"] for r in rows),
            "max_gap_oracle": max(r["gap_oracle"] for r in rows)}


def cmd_duality(args):
    cfg = _config(args)
    res = duality_check(args.size, args.cases, cfg.noise["seed"])
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    (out / "duality.json").write_text(json.dumps(res, indent=1))
    print(f"max relative gap: tikhonov {res['max_gap_tikhonov']:.3e}, "
          f"oracle {res['max_gap_oracle']:.3e}")
    if max(res["max_gap_tikhonov"], res["max_gap_oracle"]) > 1e-6:
        raise ArithmeticError("duality gap above 1e-6")


def render_report(result_dir):
    """Markdown summary of a scan directory; also writes ``report_data/*.dat``."""
    d = Path(result_dir)
    metrics, rows = read_result(d)
    lines = ["# NRT scan report", ""]
    lines.append(f"Domains: {metrics['n_domains']} "
                 f"(positive {metrics.get('n_positive')}, negative {metrics.get('n_negative')}, "
                 f"uncertain {metrics.get('n_uncertain')}, failed {metrics.get('n_failed')})")
    lines.append("")
    if metrics.get("degenerate"):
        lines.append("**Degenerate scan**: no positive domain, the reconstruction is the "
                     "whole conductor.")
        lines.append("")
    lines += ["| metric | value |", "|---|---|"]
    for key in ("separation_ratio", "jaccard", "theta", "noise_delta", "runtime_seconds"):
        lines.append(f"| {key} | {json.dumps(metrics.get(key))} |")
    lines += ["", "## Verdicts", "",
              "| # | centre | radius | verdict | slope | plateau | alphas |",
              "|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['index']} | ({r.get('center_x', '')}, {r.get('center_y', '')}) "
                     f"| {r.get('radius0', '')} | {r['verdict']} | {r.get('slope', '')} "
                     f"| {r['plateau']} | {r.get('n_alphas', '')} |")
    data_dir = d / "report_data"
    data_dir.mkdir(exist_ok=True)
    written = []
    for path in sorted((d / "paths").glob("*.csv")) if (d / "paths").exists() else []:
        with open(path, newline="") as fh:
            body = list(csv.reader(fh))
        if not body or body[0] != ["alpha", "norm", "residual"]:
            raise ValueError(f"malformed path file {path}")
        dat = data_dir / (path.stem + ".dat")
        dat.write_text("# alpha norm residual\n" + "".join(" ".join(row) + "\n"
                                                         for row in body[1:]))
        written.append(dat.name)
    lines += ["", "## Indicator paths", "",
              f"{len(written)} gnuplot data files in `report_data/` "
              "(columns: alpha, norm, residual), e.g.", "",
              "    set logscale xy; plot for [f in system('ls report_data/*.dat')] f u 1:2 w lp",
              ""]
    return "\n".join(lines)


def cmd_report(args):
    text = render_report(args.result)
    target = Path(args.output) if args.output else Path(args.result) / "report.md"
    target.write_text(text)
    print(f"wrote {target}")


_COMMANDS = {"forward": cmd_forward, "scan": cmd_scan, "probe": cmd_probe,
             "duality-check": cmd_duality, "report": cmd_report}


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ScanAborted, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
