"""Test-domain scans: forward data, per-domain indicators, reconstruction.

A scan synthesizes the Cauchy data of ``w`` once on a finer collocation
than the inversion uses, evaluates the Tikhonov path of every test domain,
calibrates the plateau threshold on the whole family and only then assigns
verdicts. The reconstruction is the pixel intersection of the positive
domains.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import operators
from .forward import (CauchyData, add_noise, cauchy_of_w, solve_background, solve_direct)
from .geometry import (RadialShape, circle, discretize, homotopy_family, jaccard,
                       mask_from_shapes, pixel_grid, shape_inclusion, shrink)
from .indicator import (Policy, RegPath, calibrate_theta, classify, morozov_truncate,
                        spectrum, sup_form, tikhonov_path)
from .operators import NormSurrogate, OperatorCache

__all__ = [
    "ScanAborted",
    "ForwardData",
    "DomainRecord",
    "ScanResult",
    "make_family",
    "synthesize_data",
    "run_scan",
    "separation_report",
    "write_result",
    "read_result",
]

log = logging.getLogger(__name__)

MAX_FAILED_FRACTION = 0.2
# separation ratio the standard configuration is expected to reach (noise free)
SEPARATION_TARGET = 10.0


class ScanAborted(RuntimeError):
    """More than a fifth of the test domains failed."""


def _disk_grid(spec):
    x0, x1, y0, y1 = spec.get("box", (-0.5, 0.5, -0.5, 0.5))
    xs = np.linspace(x0, x1, spec.get("nx", 3))
    ys = np.linspace(y0, y1, spec.get("ny", 3))
    radii = spec.get("radii", [0.3])
    return [circle((x, y), r) for y in ys for x in xs for r in radii]


def make_family(specs, omega, clearance=0.05):
    """Test domains from one family spec (a dict) or a list of them.

    ``disk_grid`` members violating the clearance are dropped (the grid is a
    search pattern); ``custom`` and ``homotopy`` members must all comply.
    The homotopy runs from ``omega`` shrunk by ``clearance`` to ``target``.
    """
    specs = [specs] if isinstance(specs, dict) else list(specs)
    inner = shrink(omega, clearance)
    out = []
    for spec in specs:
        kind = spec["kind"]
        if kind == "disk_grid":
            members = [g for g in _disk_grid(spec) if shape_inclusion(g, inner)]
            dropped = len(_disk_grid(spec)) - len(members)
            if dropped:
                log.info("disk grid: %d members dropped for clearance", dropped)
            out.extend(members)
            continue
        if kind == "homotopy":
            target = _as_shape(spec["target"])
            members = homotopy_family(inner, target, spec.get("steps", 5))
        elif kind == "custom":
            members = [_as_shape(s) for s in spec["shapes"]]
        else:
            raise ValueError(f"unknown family kind {kind!r}")
        for i, g in enumerate(members):
            # the shrunk outer endpoint touches the clearance curve by construction
            if not (shape_inclusion(g, omega) and np.all(_gap(g, omega) >= clearance - 1e-12)):
                raise ValueError(f"{kind} member {i} violates the clearance {clearance}")
        out.extend(members)
    return out


def _as_shape(s):
    return s if isinstance(s, RadialShape) else RadialShape.from_dict(s)


def _gap(g, omega, n=256):
    pts = g.point(2 * np.pi * np.arange(n) / n)
    bd = discretize(omega, 1024).nodes
    return np.min(np.linalg.norm(pts[:, None, :] - bd[None, :, :], axis=-1), axis=1)


@dataclass(frozen=True, eq=False)
class ForwardData:
    """Measured data of one run.

    ``cauchy_u`` is the measured (possibly noisy) data of ``u``,
    ``noise_level`` the surrogate norm of the added flux noise;
    ``u_basis``/``mu_basis`` are only present when freshly solved.
    """

    cauchy_w: CauchyData
    noise_level: float
    diagnostics: dict
    cauchy_u: CauchyData = None
    u_basis: object = None
    mu_basis: object = None


def synthesize_data(cfg, cache=None):
    """Cauchy data of ``w`` for ``cfg`` (fine collocation, then sampled).

    The noise-free fluxes of ``u`` and ``mu`` are cached; noise is added to
    the flux of ``u`` afterwards with the configured seed.
    """
    if cfg.cavity is None:
        raise ValueError("a synthetic scan needs a cavity")
    gcfg = cfg.data["grid"]
    grid = cfg.grid
    refine = gcfg["data_refine"]
    params = cfg.mfs_params(data=True)
    key = OperatorCache.key(kind="forward", omega=cfg.omega.to_dict(),
                            cavity=cfg.cavity.to_dict(), T=grid.T, nt=grid.nt,
                            n=gcfg["n_omega"], n_cavity=gcfg["n_cavity"], refine=refine,
                            g=cfg.data["boundary_data"], params=params.to_dict())
    hit = cache.load(key) if cache is not None else None
    u_basis = mu_basis = None
    bd = discretize(cfg.omega, gcfg["n_omega"])
    if hit is not None:
        stacked, info = hit
        u_flux, mu_flux = stacked[0], stacked[1]
        diag = dict(info.get("diagnostics", {}), cached=True)
    else:
        u = solve_direct(cfg.omega, cfg.cavity, cfg.g, grid, params,
                         n_omega=refine * gcfg["n_omega"], n_cavity=refine * gcfg["n_cavity"],
                         n_data=gcfg["n_omega"])
        mu = solve_background(cfg.omega, cfg.g, grid, params,
                              n_omega=refine * gcfg["n_omega"], n_data=gcfg["n_omega"])
        u_flux, mu_flux = u.cauchy.neumann, mu.cauchy.neumann
        u_basis, mu_basis = u.basis, mu.basis
        diag = {"residual_direct": u.residual, "residual_background": mu.residual,
                **{f"direct_{k}": v for k, v in u.residual_by_curve.items()}}
        if cache is not None:
            cache.store(key, np.stack([u_flux, mu_flux]), {"diagnostics": diag})
    dirichlet = cfg.g(bd.nodes, grid.nodes)
    u_c = CauchyData(bd, grid, dirichlet, u_flux)
    mu_c = CauchyData(bd, grid, dirichlet, mu_flux)
    delta = cfg.noise["delta"]
    noisy = add_noise(u_c, delta, cfg.noise["seed"])
    surrogate = NormSurrogate.on(bd, grid)
    level = surrogate.norm(noisy.neumann - u_c.neumann)
    diag["delta"] = delta
    return ForwardData(cauchy_of_w(noisy, mu_c), level, diag, noisy, u_basis, mu_basis)


@dataclass
class DomainRecord:
    index: int
    shape: RadialShape
    path: RegPath | None = None
    effective: RegPath | None = None
    sup_value: float | None = None
    unresolved_fraction: float | None = None
    verdict: str = "failed"
    wall_time: float = 0.0
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def failed(self):
        return self.path is None

    def plateau(self):
        """Last-alpha norm of the path after the discrepancy cut."""
        return None if self.effective is None else float(self.effective.features["plateau"])


@dataclass
class ScanResult:
    """Verdicts, reconstruction mask and metrics of one scan."""

    records: list
    reconstruction: object
    metrics: dict
    config: dict
    theta: float
    degenerate: bool
    provenance: dict

    @property
    def positives(self):
        return [r for r in self.records if r.verdict == "positive"]

    @property
    def negatives(self):
        return [r for r in self.records if r.verdict == "negative"]


def separation_report(result):
    """Smallest negative plateau over the largest positive plateau.

    Plateaus are the last-alpha solution norms of the (truncated) paths.
    Returns ``None`` when either class is empty.
    """
    pos = [r.plateau() for r in result.positives]
    neg = [r.plateau() for r in result.negatives]
    if not pos or not neg:
        return None
    return float(min(neg) / max(pos))


def _evaluate(i, G, cfg, b, level, cache, keep_operator=False):
    rec = DomainRecord(i, G)
    t0 = time.perf_counter()
    try:
        params = cfg.operator_params
        grid = cfg.grid
        R = (cache.cached_R(G, cfg.omega, grid, params) if cache is not None
             else operators.assemble_R(G, cfg.omega, grid, params))
        spec = spectrum(R)
        path = tikhonov_path(R, b, cfg.alphas, spec=spec)
        if not np.all(np.isfinite(path.solution_norms)):
            raise FloatingPointError("non-finite solution norms")
        sup = sup_form(R, b, cutoff=cfg.indicator["sup_cutoff"], spec=spec)
        rec.path = path
        rec.effective = morozov_truncate(path, level, keep_min=Policy().tail)
        rec.diagnostics = {"max_trace_residual": R.diagnostics.get("max_trace_residual")}
        rec.sup_value, rec.unresolved_fraction = sup.value, sup.unresolved_fraction
        if keep_operator:
            rec.diagnostics["operator"] = R
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("domain %d failed: %s", i, rec.error)
    rec.wall_time = time.perf_counter() - t0
    return rec


def run_scan(cfg, data=None, cache=None, family=None, truth_pixels=None):
    """Run the NRT over the configured family.

    ``data`` (a :class:`ForwardData`) and ``family`` override the ones
    derived from ``cfg``. Two passes: all paths first, then the threshold
    and the verdicts.
    """
    t_start = time.perf_counter()
    omega, grid = cfg.omega, cfg.grid
    data = data if data is not None else synthesize_data(cfg, cache)
    fam = family if family is not None else make_family(
        cfg.data["geometry"]["family"], omega, cfg.data["geometry"]["clearance"])
    if not fam:
        raise ValueError("empty test-domain family")
    b = data.cauchy_w.neumann.ravel()
    level = data.noise_level
    if cfg.data["solver"]["kernel"] == "dirichlet":
        # build the shared correction once, before any worker touches it
        operators._corrector(omega, grid, cfg.operator_params)
    workers = cfg.data.get("workers", 1)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda a: _evaluate(a[0], a[1], cfg, b, level, cache),
                                    enumerate(fam)))
    else:
        records = [_evaluate(i, G, cfg, b, level, cache) for i, G in enumerate(fam)]
    records.sort(key=lambda r: r.index)
    failed = [r for r in records if r.failed]
    if len(failed) > MAX_FAILED_FRACTION * len(records):
        raise ScanAborted(f"{len(failed)} of {len(records)} domains failed; first error: "
                          f"{failed[0].error}")
    policy = cfg.policy
    ok = [r for r in records if not r.failed]
    theta = calibrate_theta([r.effective for r in ok], cfg.indicator["theta_factor"], policy)
    for r in ok:
        r.verdict = classify(r.path, theta, policy, noise_level=level)
        r.path.verdict = r.effective.verdict = r.verdict
    grid_px = pixel_grid(_bbox(omega), cfg.data["grid"]["pixels"])
    positives = [r.shape for r in records if r.verdict == "positive"]
    degenerate = not positives
    recon = mask_from_shapes(positives if positives else [omega], grid_px)
    truth = truth_pixels or (mask_from_shapes([cfg.cavity], grid_px) if cfg.cavity else None)
    metrics = {
        "n_domains": len(records),
        "n_positive": len(positives),
        "n_negative": sum(r.verdict == "negative" for r in records),
        "n_uncertain": sum(r.verdict == "uncertain" for r in records),
        "n_failed": len(failed),
        "theta": theta,
        "noise_delta": cfg.noise["delta"],
        "noise_level": level,
        "degenerate": degenerate,
        "runtime_seconds": time.perf_counter() - t_start,
    }
    result = ScanResult(records, recon, metrics, cfg.to_dict(), theta, degenerate,
                        {"config_hash": cfg.hash(), "delta": cfg.noise["delta"],
                         "forward": data.diagnostics})
    metrics["separation_ratio"] = separation_report(result)
    metrics["separation_target"] = SEPARATION_TARGET
    metrics["jaccard"] = None if truth is None or degenerate else jaccard(recon, truth)
    return result


def _bbox(omega, pad=0.0):
    pts = omega.point(2 * np.pi * np.arange(512) / 512)
    lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_pgm(path, mask):
    """Binary PGM (P5) of a boolean pixel grid, row 0 at the top."""
    vals = np.asarray(mask.values, dtype=bool)
    img = np.where(vals, 255, 0).astype(np.uint8)[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def write_result(result, directory):
    """Persist a scan as a directory.

    Files: ``config.json``, ``verdicts.csv``, ``paths/*.csv``, ``recon.pgm``
    and ``metrics.json``.
    """
    d = Path(directory)
    (d / "paths").mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(result.config, indent=1, sort_keys=True))
    with open(d / "verdicts.csv", "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["index", "center_x", "center_y", "radius0", "verdict", "slope",
                      "plateau", "sup_value", "unresolved_fraction", "n_alphas",
                      "wall_time", "error"])
        for r in result.records:
            f = r.effective.features if r.effective is not None else {}
            out.writerow([r.index, _fmt(r.shape.center[0]), _fmt(r.shape.center[1]),
                          _fmt(r.shape.radius0), r.verdict, _fmt(f.get("slope")),
                          _fmt(f.get("plateau")), _fmt(r.sup_value),
                          _fmt(r.unresolved_fraction),
                          "" if r.effective is None else len(r.effective), _fmt(r.wall_time),
                          r.error or ""])
            if r.path is not None:
                r.path.to_csv(d / "paths" / f"domain_{r.index:03d}.csv")
    write_pgm(d / "recon.pgm", result.reconstruction)
    meta = dict(result.metrics, provenance=result.provenance,
                shapes=[r.shape.to_dict() for r in result.records])
    (d / "metrics.json").write_text(json.dumps(meta, indent=1, sort_keys=True,
                                               default=_json_default))
    return d


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def read_result(directory):
    """Load ``metrics.json`` and ``verdicts.csv`` of a result directory.

    Raises ``ValueError`` when either is missing or malformed.
    """
    d = Path(directory)
    try:
        metrics = json.loads((d / "metrics.json").read_text())
        with open(d / "verdicts.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"not a scan result directory: {d} ({exc})") from None
    required = {"index", "verdict", "plateau"}
    if rows and not required <= set(rows[0]):
        raise ValueError(f"verdicts.csv in {d} lacks columns {sorted(required)}")
    if "n_domains" not in metrics:
        raise ValueError(f"metrics.json in {d} lacks n_domains")
    return metrics, rows
