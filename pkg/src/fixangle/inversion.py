"""Potential recovery, the exit map, boundary ray transforms and the stability ratio."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .eikonal import SemigeodesicChart, build_chart, integrate_geodesics
from .errors import CertificateError, ConfigError, NumericalError
from .geometry import (MetricField, PotentialField, metric_asymmetry, metric_inverse_and_det,
                       potential_asymmetry, zero_potential)
from .grid import SplineField, UniformGrid, disk_mask, trapezoid_weights
from .transport import WavefrontData, a_minus1_field, amplitude_a_minus1, characteristic_points
from .wavesolver import (BoundaryTrace, EnergyReport, ExtractedWavefront, WaveField, boundary_points,
                         chart_fronts, energy_report, extract_boundary_trace, extract_wavefront_value,
                         sigma_norms, solve_cauchy, time_reflect)

BISECT_ITERS = 60
SYMMETRY_TOL = 1e-10
RAY_TOL = 0.02
RAY_FLOOR = 0.05  # relative errors are measured against max(|R|, RAY_FLOOR * max|R|)
SNAPSHOT_STEP = 0.05


# ---------------------------------------------------------------------------
# potential from wavefront data


@dataclass
class RecoveredPotential:
    """Recovered potential on a grid with its coverage mask."""

    grid: UniformGrid
    values: np.ndarray
    mask: np.ndarray
    method: str

    @property
    def coverage(self) -> float:
        """Fraction of grid nodes in the closed ball with a valid estimate."""
        ball = disk_mask(self.grid)
        return float(np.sum(self.mask & ball) / np.sum(ball))

    def relative_error(self, truth, radius: float = 1.0) -> float:
        """Relative ``L²`` error over covered nodes with ``|x| <= radius``.

        ``truth`` is a :class:`PotentialField` or an array on the grid.
        """
        t = truth(self.grid.points()).reshape(self.grid.shape) if callable(truth) else np.asarray(truth)
        m = self.mask & disk_mask(self.grid, radius)
        den = np.linalg.norm(t[m])
        num = np.linalg.norm((self.values - t)[m])
        return float(num / den) if den > 0 else float(num)


def _stencil_points(chart: SemigeodesicChart, step: float) -> np.ndarray:
    y1 = chart.ycoord_.ravel()
    t = chart.omega_.ravel()[:, None] + np.array([-step, step])[None, :]
    return characteristic_points(chart, y1, t).reshape(chart.grid_.shape + (2, 2))


def recover_q_from_wavefront(data, chart: SemigeodesicChart) -> RecoveredPotential:
    """``q̂ = -2 d/ds (u/a_{-1}) + Δ_g a_{-1}/a_{-1}`` along the characteristics.

    Parameters
    ----------
    data : WavefrontData or ExtractedWavefront
        Transport output, or a kernel extraction of a solve against a
        reference solve. For an extraction, ``w`` already is the
        difference of ``u/a_{-1}`` between the two solves, so the
        ``Δ_g a_{-1}`` term cancels and the result is the potential
        difference. A downward (``-e_n``) extraction is differentiated
        along the reversed characteristic.
    chart : SemigeodesicChart

    Notes
    -----
    Transport data carry ``u/a_{-1}`` sampled along each characteristic,
    so a fourth-order central difference in the curve parameter is used.
    For extracted fields the values at ``s = ±h`` are read from a cubic
    spline of the extracted grid field.
    """
    grid = chart.grid_
    ball = disk_mask(grid)
    if isinstance(data, WavefrontData):
        w = data.w_stencil
        dw = (-w[..., 5] + 8 * w[..., 4] - 8 * w[..., 2] + w[..., 1]) / (12 * data.ds)
        return RecoveredPotential(grid, np.where(ball, -2 * dw + data.lap_ratio, 0.0), ball.copy(), "transport")
    if isinstance(data, ExtractedWavefront):
        if data.grid != grid:
            raise ConfigError("extraction grid differs from the chart grid")
        h = grid.h
        sp = _stencil_points(chart, h).reshape(-1, 2)
        lo, hi = grid.axis[0], grid.axis[-1]
        inside = np.all((sp >= lo) & (sp <= hi), axis=1).reshape(grid.shape + (2,)).all(axis=-1)
        spl = SplineField(grid, data.w)
        vals = spl(np.clip(sp, lo, hi)).reshape(grid.shape + (2,))
        dw = (vals[..., 1] - vals[..., 0]) / (2 * h)
        mask = ball & inside
        q = np.where(mask, -2.0 * data.direction * dw, 0.0)
        return RecoveredPotential(grid, q, mask, f"fdtd-{data.method}")
    raise ConfigError(f"cannot recover a potential from {type(data).__name__}")


class PotentialRecovery(BaseEstimator):
    """Estimator form of :func:`recover_q_from_wavefront`.

    ``fit`` takes wavefront data (transport or extracted); ``predict``
    evaluates the recovered potential at points by cubic-spline
    interpolation, returning 0 outside the covered region.
    """

    def __init__(self, chart: SemigeodesicChart | None = None):
        self.chart = chart

    def fit(self, X, y=None) -> "PotentialRecovery":
        if self.chart is None:
            raise ConfigError("PotentialRecovery needs a chart", "chart")
        self.result_ = recover_q_from_wavefront(X, self.chart)
        self.q_ = self.result_.values
        self.coverage_ = self.result_.coverage
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "result_")
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        g = self.result_.grid
        vals = SplineField(g, self.q_)(pts)
        return np.where(np.sum(pts**2, axis=1) <= 1.0 + 1e-12, vals, 0.0)

    def score(self, X, y=None) -> float:
        """Negative relative ``L²`` error against the true potential ``X``."""
        check_is_fitted(self, "result_")
        return -self.result_.relative_error(X)


# ---------------------------------------------------------------------------
# exit map


def exit_times(chart: SemigeodesicChart, y1: np.ndarray, t_start: np.ndarray) -> np.ndarray:
    """First time after ``t_start`` at which chart curve ``y1`` crosses the unit circle.

    Bisection on ``|F(y', t)|² - 1``; NaN where ``F(y', t_start)`` is not
    inside the closed ball.
    """
    y1 = np.asarray(y1, dtype=float).ravel()
    lo = np.asarray(t_start, dtype=float).ravel().copy()
    hi = np.full_like(lo, chart.t_[-1] - chart.store_step)

    def f(t):
        p = characteristic_points(chart, y1, t[:, None])[:, 0]
        return np.sum(p * p, axis=1) - 1.0

    ok = (f(lo) <= 1e-12) & (f(hi) > 0)
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        out = f(mid) > 0
        hi = np.where(out, mid, hi)
        lo = np.where(out, lo, mid)
    t = 0.5 * (lo + hi)
    t[~ok] = np.nan
    return t


@dataclass
class ExitMap:
    """Exit point ``F(x, ω(x))`` of the characteristic through every grid node."""

    grid: UniformGrid
    launch: np.ndarray
    exit_time: np.ndarray
    exit_points: np.ndarray
    s: np.ndarray
    mask: np.ndarray

    def residuals(self) -> dict:
        """``max ||F_x| - 1|`` and ``max |F^n - F^{n+1}|`` over masked nodes."""
        p = self.exit_points[self.mask]
        return {"sphere": float(np.max(np.abs(np.linalg.norm(p, axis=1) - 1.0))),
                "time_equals_xn": float(np.max(np.abs(p[:, 1] - self.exit_time[self.mask])))}

    def to_table(self) -> dict[str, np.ndarray]:
        pts = self.grid.points()
        return {"x1": pts[:, 0], "x2": pts[:, 1], "launch": self.launch.ravel(),
                "exit_x1": self.exit_points[..., 0].ravel(), "exit_x2": self.exit_points[..., 1].ravel(),
                "exit_t": self.exit_time.ravel(), "s": self.s.ravel(), "valid": self.mask.ravel().astype(int)}


def build_exit_map(chart: SemigeodesicChart) -> ExitMap:
    """Exit map on the chart grid (nodes in the closed ball)."""
    grid = chart.grid_
    ball = disk_mask(grid)
    y1 = chart.ycoord_[ball]
    w = chart.omega_[ball]
    t = exit_times(chart, y1, w)
    if np.any(np.isnan(t)):
        bad = grid.points()[ball.ravel()][np.isnan(t)][0]
        raise NumericalError(f"no exit crossing found for the characteristic through {bad.tolist()}", "inversion")
    pts = characteristic_points(chart, y1, t[:, None])[:, 0]
    T = np.full(grid.shape, np.nan)
    P = np.full(grid.shape + (2,), np.nan)
    T[ball], P[ball] = t, pts
    launch = np.where(ball, chart.ycoord_, np.nan)
    return ExitMap(grid, launch, T, P, T - np.where(ball, chart.omega_, np.nan), ball)


def exit_constancy(chart: SemigeodesicChart, x, n_points: int = 5) -> float:
    """Spread of the exit point over ``n_points`` points of one characteristic."""
    y = chart.transform(np.asarray(x, dtype=float))
    t0 = exit_times(chart, [y[0]], [y[1]])[0]
    ts = np.linspace(y[1], y[1] + 0.9 * (t0 - y[1]), n_points)
    te = exit_times(chart, np.full(n_points, y[0]), ts)
    pts = characteristic_points(chart, np.full(n_points, y[0]), te[:, None])[:, 0]
    F = np.column_stack([pts, te])
    return float(np.max(np.abs(F - F[0])))


# ---------------------------------------------------------------------------
# ray transform from boundary traces


@dataclass
class RayTransform:
    """Integrals of a potential along the chart geodesics, one per launch point."""

    launch: np.ndarray
    values: np.ndarray
    exit_points: np.ndarray | None = None
    mask: np.ndarray | None = None
    source: str = ""

    def to_table(self) -> dict[str, np.ndarray]:
        out = {"launch": self.launch, "value": self.values}
        if self.exit_points is not None:
            out["exit_x1"], out["exit_x2"] = self.exit_points[:, 0], self.exit_points[:, 1]
        return out


def ray_launches(n_rays: int = 101, extent: float = 0.95) -> np.ndarray:
    return np.linspace(-extent, extent, n_rays)


def _launch_exits(chart: SemigeodesicChart, launch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    entry = -np.sqrt(np.clip(1.0 - launch**2, 0.0, 1.0)) + 1e-9
    t = exit_times(chart, launch, entry)
    pts = characteristic_points(chart, launch, np.nan_to_num(t)[:, None])[:, 0]
    return t, pts


def recover_ray_transform(trace: BoundaryTrace, chart: SemigeodesicChart,
                          launch: np.ndarray | None = None) -> RayTransform:
    """``-2 ũ/a_{-1}`` at the exit point of each launched characteristic.

    ``trace`` must be the kernel-extracted difference trace of two upward
    solves; its ``front_value`` already is ``ũ/a_{-1}`` at ``t = x_n⁺``
    because the fit divides by the measured pulse. Values at the exit
    angles come from a periodic cubic spline in ``θ``.
    """
    if trace.front_value is None:
        raise ConfigError("the trace carries no front values; extract it against a reference solve")
    if trace.direction != 1:
        raise ConfigError("the ray transform uses the upward incident wave")
    launch = ray_launches() if launch is None else np.asarray(launch, dtype=float)
    th = np.asarray(trace.theta)
    order = np.argsort(th)
    ths, vs = th[order], trace.front_value[order]
    spl = CubicSpline(np.append(ths, ths[0] + 2 * np.pi), np.append(vs, vs[0]), bc_type="periodic")
    t, pts = _launch_exits(chart, launch)
    mask = np.isfinite(t)
    ang = np.arctan2(pts[:, 1], pts[:, 0]) % (2 * np.pi)
    vals = np.where(mask, -2.0 * spl(ang), np.nan)
    return RayTransform(launch, vals, pts, mask, "boundary")


def ray_transform_from_wavefront(wf1: WavefrontData, wf2: WavefrontData | None, chart: SemigeodesicChart,
                                 launch: np.ndarray | None = None) -> RayTransform:
    """``-2 (u_1 - u_2)/a_{-1}`` at the exit points, from transport data."""
    launch = ray_launches() if launch is None else np.asarray(launch, dtype=float)
    w = wf1.u / wf1.a_minus1 - (0.0 if wf2 is None else wf2.u / wf2.a_minus1)
    t, pts = _launch_exits(chart, launch)
    vals = -2.0 * SplineField(wf1.grid, w)(pts)
    return RayTransform(launch, vals, pts, np.isfinite(t), "transport")


def ray_transform_quadrature(metric: MetricField, q: PotentialField, launch: np.ndarray | None = None,
                             ds: float = 1e-3, reach: float = 2.6) -> RayTransform:
    """Simpson quadrature of ``q`` along geodesics shot from ``(y', -1)`` in direction ``e_n``."""
    launch = ray_launches() if launch is None else np.asarray(launch, dtype=float)
    x0 = np.column_stack([launch, np.full_like(launch, -1.0)])
    v0 = np.tile([0.0, 1.0], (len(launch), 1))
    n = int(np.ceil(reach / ds))
    n += n % 2
    xs, _ = integrate_geodesics(metric, x0, v0, ds, n)
    vals = q(xs.reshape(-1, 2)).reshape(xs.shape[:2])
    return RayTransform(launch, simpson(vals, dx=ds, axis=1), xs[:, -1], np.ones(len(launch), bool), "quadrature")


@dataclass
class RayAgreement:
    rel_errors: np.ndarray
    tol: float

    @property
    def fraction_within(self) -> float:
        e = self.rel_errors[np.isfinite(self.rel_errors)]
        return float(np.mean(e <= self.tol)) if len(e) else 0.0

    @property
    def coverage(self) -> float:
        return float(np.mean(np.isfinite(self.rel_errors)))

    def to_dict(self) -> dict:
        e = self.rel_errors[np.isfinite(self.rel_errors)]
        return {"tol": self.tol, "fraction_within": self.fraction_within, "coverage": self.coverage,
                "median_rel_error": float(np.median(e)) if len(e) else None,
                "max_rel_error": float(np.max(e)) if len(e) else None}


def ray_agreement(estimate: RayTransform, reference: RayTransform, tol: float = RAY_TOL,
                  floor: float = RAY_FLOOR) -> RayAgreement:
    """Per-ray relative differences, normalised by ``max(|R|, floor · max|R|)``."""
    ref = reference.values
    scale = np.maximum(np.abs(ref), floor * np.nanmax(np.abs(ref)))
    err = np.abs(estimate.values - ref) / np.where(scale > 0, scale, 1.0)
    err = np.where(estimate.mask if estimate.mask is not None else True, err, np.nan)
    return RayAgreement(err, tol)


# ---------------------------------------------------------------------------
# two measurements and the stability ratio


def l2_ball_squared(metric: MetricField, grid: UniformGrid, values: np.ndarray) -> float:
    """``∫_B f² |g|^{1/2} dx`` by trapezoid quadrature on the grid."""
    _, sq = metric_inverse_and_det(metric, grid.points())
    w = np.outer(trapezoid_weights(grid.n, grid.h), trapezoid_weights(grid.n, grid.h)) * disk_mask(grid)
    return float(np.sum(values**2 * sq.reshape(grid.shape) * w))


def front_curve_h1(trace: BoundaryTrace, a_boundary: np.ndarray) -> float:
    """``||ũ||²_{H¹}`` on the curve ``{(θ, t = sin θ)}`` where the wavefront meets the cylinder.

    ``ũ`` there is ``a_{-1} · front_value``; arclength is
    ``sqrt(1 + cos²θ) dθ``.
    """
    th = np.asarray(trace.theta)
    dth = th[1] - th[0]
    if not np.allclose(np.diff(th), dth):
        raise ConfigError("front curve norm needs uniformly spaced angles")
    f = a_boundary * trace.front_value
    df = (np.roll(f, -1) - np.roll(f, 1)) / (2 * dth)
    ds = np.sqrt(1.0 + np.cos(th) ** 2)
    return float(np.sum((f**2 + df**2 / ds**2) * ds) * dth)


@dataclass
class ReconstructionReport:
    """Outcome of a two-measurement (or synthesized single-measurement) experiment."""

    params: dict
    lhs: float
    rhs_terms: dict
    recovered: RecoveredPotential | None = None
    recovered_u: RecoveredPotential | None = None
    recovered_v: RecoveredPotential | None = None
    errors: dict = field(default_factory=dict)
    noise_floor: float = 0.0
    energy: EnergyReport | None = None
    traces: tuple = ()
    extracted: tuple = ()
    runtime: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))

    @property
    def degenerate(self) -> bool:
        return self.rhs == 0.0

    @property
    def ratio(self) -> float:
        if self.rhs > 0:
            return self.lhs / self.rhs
        return float("nan")

    def to_dict(self) -> dict:
        out = {"params": self.params, "lhs": self.lhs, "rhs": self.rhs, "rhs_terms": self.rhs_terms,
               "ratio": None if self.degenerate else self.ratio, "degenerate_ratio": self.degenerate,
               "errors": self.errors, "noise_floor": self.noise_floor, "runtime_s": self.runtime, **self.extra}
        if self.recovered is not None:
            out["coverage"] = self.recovered.coverage
            out["max_abs_recovered"] = float(np.max(np.abs(self.recovered.values)))
        if self.energy is not None:
            out["energy"] = self.energy.to_dict()
        return out


@dataclass
class _Solves:
    u1: WaveField
    u2: WaveField
    v1: WaveField
    v2: WaveField


def _solve_pair(metric, q1, q2, direction, chart, resolution, T, eps, pts, recover, energy):
    front = chart_fronts(chart, direction) if recover or energy else None
    wg = chart.grid_ if recover or energy else None
    snaps = np.arange(-1.0, T + 1e-9, SNAPSHOT_STEP) if energy and direction == 1 else None
    kw = dict(resolution=resolution, T=T, eps=eps, window_grid=wg, window_front=front, trace_points=pts,
              snapshot_times=snaps)
    f1 = solve_cauchy(metric, q1, direction, **kw)
    f2 = solve_cauchy(metric, q2, direction, accumulate=energy and direction == 1, **kw)
    return f1, f2


def reflect_field(field: WaveField, theta: np.ndarray) -> WaveField:
    """The ``-e_n`` solve obtained from a ``+e_n`` one by ``x_n -> -x_n``.

    Valid when metric and potential are even in ``x_n``. Windows are
    mirrored across the grid's centre line and traces map ``θ -> -θ``
    (``theta`` must be the uniform angles the traces were recorded at).
    """
    out = WaveField(field.grid, -field.direction, field.metric_name + ":reflected", field.potential_name)
    if field.windows is not None:
        out.window_nodes = field.window_nodes
        out.window_front = field.window_front[:, ::-1].copy()
        out.window_r = field.window_r
        out.windows = field.windows[:, ::-1].copy()
    if field.trace_values is not None:
        n = len(theta)
        idx = (-np.arange(n)) % n
        out.trace_points = field.trace_points
        out.trace_normals = field.trace_normals
        out.trace_values = field.trace_values[idx].copy()
        out.trace_dnormal = field.trace_dnormal[idx].copy()
    out.meta = {**field.meta, "synthesized": True}
    return out


def solver_noise_floor(field: WaveField) -> float:
    """Round-off level of a recovered potential: ``ε_mach max|U| sqrt(steps) / h``."""
    W = field.windows if field.windows is not None else field.trace_values
    scale = float(np.max(np.abs(W))) if W is not None else 1.0
    return float(np.finfo(float).eps * scale * np.sqrt(field.grid.n_steps) / field.grid.h)


def _analyse(metric, chart, q1, q2, s: _Solves, th, T, sigma, recover, energy, params) -> ReconstructionReport:
    grid = chart.grid_
    qt = (q1(grid.points()) - q2(grid.points())).reshape(grid.shape)
    lhs = l2_ball_squared(metric, grid, qt)
    tu = extract_boundary_trace(s.u1, s.u2, t_min=-T, t_max=T, theta=th)
    tv_raw = extract_boundary_trace(s.v1, s.v2, t_min=-T, t_max=T, theta=th)
    tv = time_reflect(tv_raw)
    a_b = amplitude_a_minus1(chart, tu.points)
    terms = {"front_curve_u": front_curve_h1(tu, a_b),
             "sigma_u": sigma_norms(tu, T)[0],
             "sigma_v": sigma_norms(tv, T)[0]}
    rep = ReconstructionReport(params, lhs, terms, traces=(tu, tv))
    if recover:
        ex_u = extract_wavefront_value(s.u1, s.u2)
        ex_v = extract_wavefront_value(s.v1, s.v2)
        ru = recover_q_from_wavefront(ex_u, chart)
        rv = recover_q_from_wavefront(ex_v, chart)
        mask = ru.mask & rv.mask
        rec = RecoveredPotential(grid, np.where(mask, 0.5 * (ru.values + rv.values), 0.0), mask, "two-measurement")
        rep.recovered, rep.recovered_u, rep.recovered_v = rec, ru, rv
        rep.extracted = (ex_u, ex_v)
        rep.noise_floor = solver_noise_floor(s.u1)
        if np.any(qt != 0):
            rep.errors = {"combined": rec.relative_error(qt), "twin_u": ru.relative_error(qt),
                          "twin_v": rv.relative_error(qt)}
        else:
            rep.errors = {"max_abs": float(np.max(np.abs(rec.values)))}
        if energy:
            rep.energy = energy_report(metric, chart, (s.u1, s.u2), ex_u, a_minus1_field(chart),
                                       q_tilde=qt, sigma=sigma, T=T, trace=tu)
    return rep


def two_measurement_experiment(metric: MetricField, q1: PotentialField, q2: PotentialField | None = None,
                               resolution: int = 129, T: float = 1.5, sigma: float = 1.0,
                               eps: float | None = None, n_theta: int | None = None,
                               recover: bool = True, energy: bool = False,
                               chart: SemigeodesicChart | None = None) -> ReconstructionReport:
    """Four forward solves (``q_1, q_2`` × ``±e_n``) and everything derived from them.

    Forms ``ũ = u_1 - u_2`` from the upward solves and the reflected
    ``ṽ(x, t) = -(v_1 - v_2)(x, -t)`` from the downward ones, evaluates
    ``||q_1 - q_2||²_{L²(B)}`` against the boundary norm bundle
    ``||ũ||²_{H¹(Γ_g ∩ Σ)} + ||ũ||²_{H¹(Σ)} + ||ṽ||²_{H¹(Σ)}`` and, when
    ``recover`` is set, recovers ``q_1 - q_2`` from both wavefronts (the
    twin transport identities) and averages them.

    The boundary window is ``[-T, T]`` with the experiment's ``T``; the
    horizon of the Carleman weight is far larger and is not simulated.
    """
    q2 = zero_potential() if q2 is None else q2
    t0 = time.perf_counter()
    chart = build_chart(metric, resolution) if chart is None else chart
    th, pts = boundary_points(n_theta or 2 * (resolution - 1))
    u1, u2 = _solve_pair(metric, q1, q2, 1, chart, resolution, T, eps, pts, recover, energy)
    v1, v2 = _solve_pair(metric, q1, q2, -1, chart, resolution, T, eps, pts, recover, False)
    params = {"metric": metric.name, "metric_params": metric.params, "q1": q1.name, "q2": q2.name,
              "resolution": resolution, "eps": u1.eps, "T": T, "sigma": sigma, "n_theta": len(th),
              "mode": "two-measurement"}
    rep = _analyse(metric, chart, q1, q2, _Solves(u1, u2, v1, v2), th, T, sigma, recover, energy, params)
    rep.runtime = time.perf_counter() - t0
    return rep


def check_symmetric_inputs(metric: MetricField, *potentials: PotentialField) -> dict:
    """Asymmetry of the metric and potentials under ``x_n -> -x_n``; raises above tolerance."""
    out = {"metric": metric_asymmetry(metric)}
    for i, q in enumerate(potentials):
        out[f"q{i + 1}"] = potential_asymmetry(q, metric.dim)
    bad = {k: v for k, v in out.items() if v > SYMMETRY_TOL}
    if bad:
        raise CertificateError(f"inputs are not even in x_n: {bad}", out)
    return out


def single_measurement_symmetric(metric: MetricField, q1: PotentialField, q2: PotentialField | None = None,
                                 resolution: int = 129, T: float = 1.5, sigma: float = 1.0,
                                 eps: float | None = None, n_theta: int | None = None,
                                 recover: bool = True, verify: bool = False,
                                 chart: SemigeodesicChart | None = None) -> ReconstructionReport:
    """The two-measurement experiment with the ``-e_n`` data synthesized by reflection.

    With ``verify`` the downward problems are also solved directly; the
    report then carries the direct-vs-synthesized defect of the extracted
    wavefront, a discretization estimate for it (the same quantity
    compared with the next coarser grid) and the reconstruction error of
    the genuine two-measurement path.
    """
    q2 = zero_potential() if q2 is None else q2
    cert = check_symmetric_inputs(metric, q1, q2)
    t0 = time.perf_counter()
    chart = build_chart(metric, resolution) if chart is None else chart
    th, pts = boundary_points(n_theta or 2 * (resolution - 1))
    u1, u2 = _solve_pair(metric, q1, q2, 1, chart, resolution, T, eps, pts, recover, False)
    v1, v2 = reflect_field(u1, th), reflect_field(u2, th)
    params = {"metric": metric.name, "metric_params": metric.params, "q1": q1.name, "q2": q2.name,
              "resolution": resolution, "eps": u1.eps, "T": T, "sigma": sigma, "n_theta": len(th),
              "mode": "single-measurement-symmetric", "asymmetry": cert}
    rep = _analyse(metric, chart, q1, q2, _Solves(u1, u2, v1, v2), th, T, sigma, recover, False, params)
    if verify:
        d1, d2 = _solve_pair(metric, q1, q2, -1, chart, resolution, T, eps, pts, True, False)
        direct = _analyse(metric, chart, q1, q2, _Solves(u1, u2, d1, d2), th, T, sigma, True, False, params)
        synth = extract_wavefront_value(v1, v2).w
        dirw = extract_wavefront_value(d1, d2).w
        ball = disk_mask(chart.grid_)
        scale = np.linalg.norm(dirw[ball])
        defect = float(np.linalg.norm((synth - dirw)[ball]) / scale) if scale > 0 else 0.0
        est = _coarse_difference(metric, q1, q2, resolution, T, chart, dirw)
        rep.extra["verification"] = {"defect": defect, "discretization_estimate": est,
                                     "two_measurement_errors": direct.errors}
    rep.runtime = time.perf_counter() - t0
    return rep


def _coarse_difference(metric, q1, q2, resolution, T, chart, fine_w) -> float:
    """Relative difference between the downward extraction at ``resolution`` and at the next coarser grid."""
    rc = (resolution + 1) // 2
    cc = build_chart(metric, rc)
    f1, f2 = _solve_pair(metric, q1, q2, -1, cc, rc, T, None, None, True, False)
    wc = extract_wavefront_value(f1, f2).w
    # coarse node i sits on fine node off + 2i; the padding makes off negative
    off = int(round((cc.grid_.x0 - chart.grid_.x0) / chart.grid_.h))
    j = off + 2 * np.arange(cc.grid_.n)
    keep = (j >= 0) & (j < chart.grid_.n)
    fine = fine_w[np.ix_(j[keep], j[keep])]
    ball = disk_mask(cc.grid_)[np.ix_(keep, keep)]
    coarse = wc[np.ix_(keep, keep)]
    scale = np.linalg.norm(fine[ball])
    return float(np.linalg.norm((coarse - fine)[ball]) / scale) if scale > 0 else 0.0
