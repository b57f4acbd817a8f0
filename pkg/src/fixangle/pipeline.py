"""Config-driven experiment stages and the run manifest."""

from __future__ import annotations

import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .carleman import CarlemanWeight, certify_weight, compute_h
from .config import ExperimentConfig
from .eikonal import build_chart, eikonal_residual, verify_no_caustics
from .errors import CertificateError, ConfigError, FixAngleError, NumericalError
from .geometry import random_potential, zero_potential
from .inversion import (PotentialRecovery, ray_agreement, ray_transform_from_wavefront,
                        ray_transform_quadrature, recover_q_from_wavefront, recover_ray_transform,
                        single_measurement_symmetric, solver_noise_floor, two_measurement_experiment)
from .io import inventory, write_grid_fields, write_json, write_table
from .transport import compute_wavefront
from .wavesolver import (boundary_points, chart_fronts, extract_boundary_trace, extract_wavefront_value,
                         solve_cauchy)

MANIFEST_SCHEMA = "fixangle-manifest/1"
MANIFEST_NAME = "manifest.json"


class Run:
    """Collects outputs, stage timings and certificate summaries for one run."""

    def __init__(self, cfg: ExperimentConfig, outdir: Path):
        self.cfg = cfg
        self.outdir = Path(outdir)
        self.outputs: list[Path] = []
        self.timings: dict[str, float] = {}
        self.certificates: dict = {}
        self.summary: dict = {}
        self.failed: list[str] = []

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except FixAngleError:
            raise
        except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise NumericalError(str(exc), name) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def table(self, name: str, columns: dict, meta: dict | None = None) -> None:
        self.outputs.append(write_table(self.outdir / name, columns, meta))

    def grid(self, name: str, grid, fields: dict, meta: dict | None = None) -> None:
        self.outputs.append(write_grid_fields(self.outdir / name, grid, fields, meta))

    def json(self, name: str, obj) -> None:
        self.outputs.append(write_json(self.outdir / name, obj))

    def certificate(self, name: str, cert: dict) -> None:
        self.certificates[name] = cert
        if not cert.get("passed", True):
            self.failed.append(name)

    def manifest(self) -> dict:
        status = "certificate-failed" if self.failed else "ok"
        return {"schema": MANIFEST_SCHEMA, "version": __version__, "config": self.cfg.to_dict(),
                "status": status, "failed_certificates": self.failed, "stages_s": self.timings,
                "certificates": self.certificates, "summary": self.summary,
                "outputs": inventory(self.outputs, self.outdir)}

    def finish(self) -> dict:
        man = self.manifest()
        write_json(self.outdir / MANIFEST_NAME, man)
        return man


# ---------------------------------------------------------------------------
# stages


def _chart(run: Run, metric, resolution: int):
    with run.stage("chart"):
        chart = build_chart(metric, resolution)
        cert = verify_no_caustics(chart).to_dict()
        res = eikonal_residual(chart).to_dict()
    run.certificate("chart", cert)
    run.summary["eikonal_residual"] = res
    run.table("chart.csv", chart.to_table(), {"grid_x0": chart.grid_.x0, "grid_h": chart.grid_.h,
                                              "grid_n": chart.grid_.n, "metric": metric.name})
    return chart


def _forward(run: Run, cfg: ExperimentConfig, metric, chart, q, res: int) -> None:
    with run.stage("transport"):
        wf = compute_wavefront(chart, q)
    run.table("wavefront.csv", wf.to_table(), {"grid_x0": wf.grid.x0, "grid_h": wf.grid.h, "grid_n": wf.grid.n})
    th, pts = boundary_points(cfg.grid.n_theta or 2 * (res - 1))
    eps = cfg.grid.eps_for(res)
    with run.stage("wavesolver"):
        kw = dict(resolution=res, T=cfg.grid.T, eps=eps, window_grid=chart.grid_,
                  window_front=chart_fronts(chart), trace_points=pts)
        f = solve_cauchy(metric, q, 1, **kw)
        b = f if q.is_zero else solve_cauchy(metric, zero_potential(), 1, **kw)
        tr = extract_boundary_trace(f, b, t_max=cfg.grid.T, theta=th)
        ex = extract_wavefront_value(f, b)
    run.table("trace.csv", tr.to_table(), {"eps": eps, "direction": 1})
    run.grid("extracted.csv", chart.grid_, {"u_over_a": ex.w, "u_transport": wf.u / wf.a_minus1})
    run.json("solver.json", f.manifest())
    ball = np.sum(chart.grid_.points() ** 2, axis=1).reshape(chart.grid_.shape) <= 1 + 1e-12
    den = np.linalg.norm((wf.u / wf.a_minus1)[ball])
    diff = np.linalg.norm((ex.w - wf.u / wf.a_minus1)[ball])
    run.summary["forward"] = {"eps": eps, "steps": f.grid.n_steps,
                              "extraction_vs_transport": float(diff / den) if den > 0 else float(diff)}


def _certify(run: Run, cfg: ExperimentConfig, chart) -> None:
    c = cfg.carleman
    with run.stage("carleman"):
        w = CarlemanWeight(iota=c.iota, lam=c.lam, t_rule=c.t_rule).fit(chart)
        cert = certify_weight(w, n_samples=c.n_samples, seed=cfg.seed, sigmas=c.sigma_ladder)
    d = cert.to_dict()
    run.certificate("convexity", {"min_eigenvalue": w.convexity_.min_eigenvalue,
                                  "min_gradient": w.convexity_.min_gradient, "passed": w.convexity_.passed})
    run.certificate("level_separation", d["separation"])
    run.certificate("pseudoconvexity", d["pseudoconvexity"])
    run.certificate("h", d["h"])
    run.certificate("weight_invariant", {"max": d["weight"]["invariant_max"], "passed": d["invariant_ok"]})
    run.json("certificates.json", {"chart": run.certificates["chart"], **d})
    hv = cert.h.values
    run.table("h_sigma.csv", {"sigma": [v.sigma for v in hv], "log_h": [v.log_h for v in hv],
                              "log_bound": cert.h.log_bounds})


def _invert(run: Run, cfg: ExperimentConfig, metric, chart, q1, q2, res: int) -> None:
    eps = cfg.grid.eps_for(res)
    th, pts = boundary_points(cfg.grid.n_theta or 2 * (res - 1))
    with run.stage("transport"):
        w1, w2 = compute_wavefront(chart, q1), compute_wavefront(chart, q2)
        rec_t = recover_q_from_wavefront(w1, chart)
    with run.stage("wavesolver"):
        kw = dict(resolution=res, T=cfg.grid.T, eps=eps, window_grid=chart.grid_,
                  window_front=chart_fronts(chart), trace_points=pts)
        f1 = solve_cauchy(metric, q1, 1, **kw)
        f2 = solve_cauchy(metric, q2, 1, **kw)
    with run.stage("inversion"):
        est = PotentialRecovery(chart).fit(extract_wavefront_value(f1, f2))
        rec = est.result_
        tr = extract_boundary_trace(f1, f2, t_max=cfg.grid.T, theta=th)
        rb = recover_ray_transform(tr, chart)
        rt = ray_transform_from_wavefront(w1, w2, chart, rb.launch)
        qt = q1 - q2
        rq = ray_transform_quadrature(metric, qt, rb.launch)
    g = chart.grid_
    truth = qt(g.points()).reshape(g.shape)
    run.grid("recovered.csv", g, {"q_true": truth, "q_fdtd": rec.values, "q_transport": rec_t.values,
                                  "valid": rec.mask.astype(int)})
    run.table("rays.csv", {"launch": rb.launch, "boundary": rb.values, "transport": rt.values,
                           "quadrature": rq.values})
    floor = solver_noise_floor(f1)
    zero = not np.any(truth)
    run.summary["invert"] = {
        "eps": eps, "coverage": rec.coverage, "noise_floor": floor,
        "max_abs_recovered": float(np.max(np.abs(rec.values))),
        "fdtd_rel_error": None if zero else rec.relative_error(truth),
        "transport_rel_error": None if zero else rec_t.relative_error(q1(g.points()).reshape(g.shape)),
        "ray_boundary": ray_agreement(rb, rq).to_dict() if not zero else None,
        "ray_transport": ray_agreement(rt, rq).to_dict() if not zero else None,
    }
    if zero:
        run.summary["invert"]["below_noise_floor"] = bool(np.max(np.abs(rec.values)) <= floor)


def _report_files(run: Run, rep, prefix: str) -> None:
    run.json(f"{prefix}report.json", rep.to_dict())
    if rep.recovered is not None:
        g = rep.recovered.grid
        run.grid(f"{prefix}recovered.csv", g, {"q_combined": rep.recovered.values,
                                               "q_from_u": rep.recovered_u.values,
                                               "q_from_v": rep.recovered_v.values,
                                               "valid": rep.recovered.mask.astype(int)})


def _stability(run: Run, cfg: ExperimentConfig, metric, chart, q1, q2, res: int) -> None:
    s = cfg.stability
    kw = dict(resolution=res, T=cfg.grid.T, sigma=s.sigma, eps=cfg.grid.eps_for(res),
              n_theta=cfg.grid.n_theta, chart=chart)
    with run.stage("stability"):
        rep = two_measurement_experiment(metric, q1, q2, energy=s.energy, **kw)
    _report_files(run, rep, "")
    run.summary["stability"] = {k: v for k, v in rep.to_dict().items() if k != "params"}
    if s.n_pairs:
        rng = np.random.default_rng(cfg.seed)
        rows = {k: [] for k in ("pair", "lhs", "rhs", "ratio", "front_curve_u", "sigma_u", "sigma_v")}
        with run.stage("ensemble"):
            for i in range(s.n_pairs):
                a, b = random_potential(rng), random_potential(rng)
                r = two_measurement_experiment(metric, a, b, recover=False, **kw)
                for k, v in (("pair", i), ("lhs", r.lhs), ("rhs", r.rhs), ("ratio", r.ratio)):
                    rows[k].append(v)
                for k in ("front_curve_u", "sigma_u", "sigma_v"):
                    rows[k].append(r.rhs_terms[k])
        run.table("ensemble.csv", rows)
        ratios = np.array(rows["ratio"])
        run.summary["ensemble"] = {"n_pairs": s.n_pairs, "median_ratio": float(np.median(ratios)),
                                   "max_ratio": float(np.max(ratios)),
                                   "geometric_mean_ratio": float(np.exp(np.mean(np.log(ratios))))}


def _symmetric(run: Run, cfg: ExperimentConfig, metric, chart, q1, q2, res: int) -> None:
    with run.stage("symmetric"):
        rep = single_measurement_symmetric(metric, q1, q2, resolution=res, T=cfg.grid.T,
                                           sigma=cfg.stability.sigma, eps=cfg.grid.eps_for(res),
                                           n_theta=cfg.grid.n_theta, chart=chart)
    run.certificate("symmetry", {**rep.params["asymmetry"], "passed": True})
    _report_files(run, rep, "")
    run.summary["symmetric"] = {k: v for k, v in rep.to_dict().items() if k != "params"}


def run_experiment(cfg: ExperimentConfig, outdir: str | Path | None = None) -> dict:
    """Execute ``cfg.kind`` at the first configured resolution and write the manifest last.

    Raises :class:`CertificateError` after the manifest is written when a
    certificate failed.
    """
    run = Run(cfg, Path(outdir or cfg.output))
    metric = cfg.build_metric()
    pots = cfg.build_potentials()
    q1 = pots[0]
    q2 = pots[1] if len(pots) > 1 else zero_potential()
    res = cfg.grid.resolutions[0]
    chart = _chart(run, metric, res)
    if cfg.kind == "forward":
        _forward(run, cfg, metric, chart, q1, res)
    elif cfg.kind == "certify":
        _certify(run, cfg, chart)
    elif cfg.kind == "invert":
        _invert(run, cfg, metric, chart, q1, q2, res)
    elif cfg.kind == "stability":
        _stability(run, cfg, metric, chart, q1, q2, res)
    elif cfg.kind == "symmetric":
        _symmetric(run, cfg, metric, chart, q1, q2, res)
    man = run.finish()
    if run.failed:
        raise CertificateError(f"certificates failed: {run.failed}", man)
    return man


def _order(e: np.ndarray, h: np.ndarray) -> list:
    out = [None]
    for i in range(1, len(e)):
        ok = e[i] > 0 and e[i - 1] > 0
        out.append(float(np.log(e[i - 1] / e[i]) / np.log(h[i - 1] / h[i])) if ok else None)
    return out


def run_sweep(cfg: ExperimentConfig, outdir: str | Path | None = None) -> dict:
    """Convergence table over the configured resolutions.

    Columns per resolution: max eikonal residual, transport round-trip
    error of the first potential, median ray-transform error of transport
    data against geodesic quadrature, ``log h(σ)`` on the σ ladder, and
    observed orders between adjacent rows.
    """
    res_list = cfg.grid.resolutions
    if len(res_list) < 2:
        raise ConfigError("a sweep needs at least two resolutions", "grid.resolutions")
    run = Run(cfg, Path(outdir or cfg.output))
    metric = cfg.build_metric()
    q = cfg.build_potentials()[0]
    rows = {"resolution": [], "h": [], "eikonal_residual": [], "roundtrip_error": [], "ray_error": []}
    sig = list(cfg.carleman.sigma_ladder)
    for s in sig:
        rows[f"log_h_sigma_{s:g}"] = []
    rq = ray_transform_quadrature(metric, q) if not q.is_zero else None
    for res in res_list:
        with run.stage(f"sweep_{res}"):
            chart = build_chart(metric, res)
            resid = eikonal_residual(chart).max
            wf = compute_wavefront(chart, q)
            w0 = compute_wavefront(chart, zero_potential())
            g = chart.grid_
            rec = recover_q_from_wavefront(wf, chart)
            err = rec.relative_error(q) if not q.is_zero else float(np.max(np.abs(rec.values)))
            if rq is not None:
                rt = ray_transform_from_wavefront(wf, w0, chart, rq.launch)
                ray = float(np.nanmedian(ray_agreement(rt, rq).rel_errors))
            else:
                ray = 0.0
            w = CarlemanWeight(iota=cfg.carleman.iota, lam=cfg.carleman.lam, t_rule=cfg.carleman.t_rule,
                               require_convexity=False).fit(chart)
            for s in sig:
                rows[f"log_h_sigma_{s:g}"].append(compute_h(w, s).log_h)
        rows["resolution"].append(res)
        rows["h"].append(g.h)
        rows["eikonal_residual"].append(resid)
        rows["roundtrip_error"].append(err)
        rows["ray_error"].append(ray)
    h = np.array(rows["h"])
    for key in ("eikonal_residual", "roundtrip_error", "ray_error"):
        rows[f"order_{key}"] = [np.nan if v is None else v for v in _order(np.array(rows[key]), h)]
    run.table("sweep.csv", rows)
    run.summary["sweep"] = {k: v for k, v in rows.items()}
    run.certificate("chart", verify_no_caustics(chart).to_dict())
    return run.finish()

