"""Geodesic shooting, the semigeodesic chart and the eikonal it induces.

Unit-speed geodesics are launched from the plane ``x_n = -1 - m`` in the
direction ``e_n``. The map ``F(x', t) = γ_{x'}(t)`` is stored on a launch
grid together with its derivatives so it can be evaluated by bicubic Hermite
interpolation and inverted by Newton iteration. The second coordinate of the
inverse is the eikonal ``ω``, and the momentum covector ``g·γ'`` along each
curve is ``dω``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import CausticError, ChartInversionError, ConfigError, IntegratorError
from .geometry import MetricField, christoffel, metric_inverse_and_det
from .grid import UniformGrid, bilinear, disk_mask
from .validation import as_points, check_positive, check_resolution

SPEED_DRIFT_TOL = 1e-6
LAUNCH_FD = 1e-5
NEWTON_FD = 1e-6
EXIT_TOL = 1e-6


# ---------------------------------------------------------------------------
# integration


def _acceleration(metric: MetricField, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    if metric.flat:
        return np.zeros_like(v)
    return -np.einsum("nijk,nj,nk->ni", christoffel(metric, x), v, v)


def rk4_step(metric: MetricField, x: np.ndarray, v: np.ndarray, ds: float) -> tuple[np.ndarray, np.ndarray]:
    """One classical Runge-Kutta step of ``x' = v, v' = -Γ(x)(v, v)``."""
    a1 = _acceleration(metric, x, v)
    x2, v2 = x + 0.5 * ds * v, v + 0.5 * ds * a1
    a2 = _acceleration(metric, x2, v2)
    x3, v3 = x + 0.5 * ds * v2, v + 0.5 * ds * a2
    a3 = _acceleration(metric, x3, v3)
    x4, v4 = x + ds * v3, v + ds * a3
    a4 = _acceleration(metric, x4, v4)
    return (x + ds / 6.0 * (v + 2 * v2 + 2 * v3 + v4),
            v + ds / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4))


def geodesic_speed(metric: MetricField, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``|v|_g`` for matching batches of points and vectors."""
    g = metric(x.reshape(-1, metric.dim))
    vv = v.reshape(-1, metric.dim)
    return np.sqrt(np.einsum("njk,nj,nk->n", g, vv, vv)).reshape(x.shape[:-1])


def integrate_geodesics(metric: MetricField, x0, v0, ds: float, n_steps: int,
                        record_every: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Integrate a batch of geodesics with fixed-step RK4.

    Parameters
    ----------
    metric : MetricField
    x0, v0 : ndarray of shape (M, n)
        Initial points and velocities.
    ds : float
        Parameter step.
    n_steps : int
        Number of steps.
    record_every : int
        Store every ``record_every``-th state (the initial state is always stored).

    Returns
    -------
    xs, vs : ndarray of shape (M, S, n)
        Stored states, ``S = n_steps // record_every + 1``.

    Raises
    ------
    IntegratorError
        If ``|v|_g`` drifts from its initial value by more than 1e-6.
    """
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    n_rec = n_steps // record_every + 1
    xs = np.empty((len(x), n_rec, x.shape[1]))
    vs = np.empty_like(xs)
    xs[:, 0], vs[:, 0] = x, v
    for step in range(1, n_steps + 1):
        x, v = rk4_step(metric, x, v, ds)
        if step % record_every == 0:
            xs[:, step // record_every], vs[:, step // record_every] = x, v
    if not metric.flat:
        speed = geodesic_speed(metric, xs, vs)
        drift = float(np.max(np.abs(speed - speed[:, :1])))
        if not np.isfinite(drift) or drift > SPEED_DRIFT_TOL:
            raise IntegratorError(drift, ds)
    return xs, vs


@dataclass
class GeodesicCurve:
    """Samples of one unit-speed geodesic at uniform parameter step ``ds``."""

    s: np.ndarray
    x: np.ndarray
    v: np.ndarray
    ds: float
    exit_point: np.ndarray | None = None
    exit_direction: np.ndarray | None = None
    exit_s: float | None = None

    @property
    def launch(self) -> np.ndarray:
        return self.x[0]


def _exit_record(s, x, v):
    r = np.linalg.norm(x, axis=1)
    idx = np.nonzero((r[:-1] < 1.0) & (r[1:] >= 1.0))[0]
    if len(idx) == 0:
        return None, None, None
    i = idx[-1]
    f = (1.0 - r[i]) / (r[i + 1] - r[i])
    p = x[i] + f * (x[i + 1] - x[i])
    d = v[i] + f * (v[i + 1] - v[i])
    return p / np.linalg.norm(p), d, s[i] + f * (s[i + 1] - s[i])


def shoot_geodesic(metric: MetricField, x0, v0, ds: float = 1e-3, s_max: float = 4.0,
                   margin: float = 0.25) -> GeodesicCurve:
    """Shoot one unit-speed geodesic.

    Integration stops at ``s_max`` or once the curve is farther than
    ``1 + margin`` from the origin and moving outward.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    v0 = np.asarray(v0, dtype=float).reshape(1, -1)
    if x0.shape[1] != metric.dim or v0.shape[1] != metric.dim:
        raise ConfigError("launch point and direction must match the metric dimension")
    check_positive(ds, "ds")
    speed0 = float(geodesic_speed(metric, x0, v0)[0])
    if abs(speed0 - 1.0) > 1e-8:
        raise ConfigError(f"launch direction must have unit g-length, got {speed0:.12f}", "v0")
    xs, vs = [x0[0]], [v0[0]]
    x, v = x0, v0
    n_max = int(np.ceil(s_max / ds))
    for _ in range(n_max):
        x, v = rk4_step(metric, x, v, ds)
        xs.append(x[0])
        vs.append(v[0])
        if np.dot(x[0], x[0]) > (1.0 + margin) ** 2 and np.dot(x[0], v[0]) > 0:
            break
    X, V = np.array(xs), np.array(vs)
    if not metric.flat:
        speed = geodesic_speed(metric, X, V)
        drift = float(np.max(np.abs(speed - speed0)))
        if drift > SPEED_DRIFT_TOL:
            raise IntegratorError(drift, ds)
    s = ds * np.arange(len(X))
    p, d, se = _exit_record(s, X, V)
    return GeodesicCurve(s, X, V, ds, p, d, se)


# ---------------------------------------------------------------------------
# Hermite interpolation helpers

def _h_basis(u):
    u2, u3 = u * u, u * u * u
    return (2 * u3 - 3 * u2 + 1, u3 - 2 * u2 + u, -2 * u3 + 3 * u2, u3 - u2)


# ---------------------------------------------------------------------------
# certificates


@dataclass
class ChartCertificate:
    """No-caustic and exit-direction certificate of a semigeodesic chart."""

    min_jacobian: float
    min_location: tuple[float, float]
    exit_deviation: float
    flatness_value: float
    flatness_gradient: float
    j_min: float
    n_samples: int
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.min_jacobian >= self.j_min and self.exit_deviation <= EXIT_TOL

    def to_dict(self) -> dict:
        return {"min_jacobian": self.min_jacobian, "min_location": list(self.min_location),
                "exit_deviation": self.exit_deviation, "flatness_value": self.flatness_value,
                "flatness_gradient": self.flatness_gradient, "j_min": self.j_min,
                "n_samples": self.n_samples, "passed": self.passed}


# ---------------------------------------------------------------------------
# chart


class SemigeodesicChart(BaseEstimator, TransformerMixin):
    """Geodesic parametrization ``F(x', t)`` and the eikonal it induces.

    ``fit`` takes a :class:`MetricField`; ``transform`` maps points ``x`` to
    chart coordinates ``(y', ω)`` and ``inverse_transform`` evaluates ``F``.
    Only ``n = 2`` is supported.

    Parameters
    ----------
    resolution : int
        Nodes of the target grid along ``[-1, 1]`` (odd). Launch spacing
        equals the grid spacing ``h = 2/(resolution-1)``, offset by ``h/2``.
    ds : float
        RK4 step.
    margin : float
        Launch grid extends this far beyond the unit ball.
    j_min : float
        Smallest admissible Jacobian determinant of ``F``.
    newton_tol : float
        Newton stopping tolerance (step and residual).
    max_newton : int
        Iteration cap of the inversion.
    strict : bool
        Raise :class:`CausticError` when the Jacobian test fails.
    store_step : float
        Spacing in ``t`` of the stored curve samples.

    Attributes
    ----------
    grid_ : UniformGrid
        Target grid, ``[-1, 1]`` padded by two nodes.
    omega_, domega_, lap_omega_, hess_omega_ : ndarray
        ``ω``, ``dω``, ``Δ_g ω`` and the coordinate Hessian of ``ω`` on ``grid_``.
    ycoord_ : ndarray
        First chart coordinate ``y'`` on ``grid_``.
    certificate_ : ChartCertificate
    """

    def __init__(self, resolution: int = 129, ds: float = 1e-3, margin: float = 0.25,
                 j_min: float = 0.1, newton_tol: float = 1e-10, max_newton: int = 50,
                 strict: bool = True, store_step: float = 0.005):
        self.resolution = resolution
        self.ds = ds
        self.margin = margin
        self.j_min = j_min
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        self.strict = strict
        self.store_step = store_step

    # -- construction -------------------------------------------------------

    def fit(self, X: MetricField, y=None) -> "SemigeodesicChart":
        metric = X
        if not isinstance(metric, MetricField):
            raise ConfigError("fit expects a MetricField")
        if metric.dim != 2:
            raise ConfigError("the semigeodesic chart supports n = 2 only", "dimension")
        res = check_resolution(self.resolution)
        check_positive(self.ds, "ds")
        check_positive(self.margin, "margin")
        self.metric_ = metric
        h = 2.0 / (res - 1)
        # coarse grids need room for the padded target grid plus a Newton seed
        margin = max(self.margin, 4 * h)
        self.margin_ = margin
        k0 = int(np.ceil(margin / h))
        m_launch = 2 * k0 + res - 1
        self.launch_ = -1.0 + (np.arange(m_launch) - k0 + 0.5) * h
        self.dlaunch_ = h

        t0, t1 = -1.0 - margin, 1.0 + margin
        stride = max(1, int(round(self.store_step / self.ds)))
        n_steps = stride * int(np.ceil((t1 - t0) / (self.ds * stride)))
        ds = (t1 - t0) / n_steps
        self.ds_ = ds
        self.dt_store_ = ds * stride
        self.t_ = t0 + self.dt_store_ * np.arange(n_steps // stride + 1)

        lp = np.concatenate([self.launch_, self.launch_ + LAUNCH_FD, self.launch_ - LAUNCH_FD])
        x0 = np.stack([lp, np.full_like(lp, t0)], axis=1)
        v0 = np.tile([0.0, 1.0], (len(lp), 1))
        xs, vs = integrate_geodesics(metric, x0, v0, ds, n_steps, stride)
        M = m_launch
        self.X_, self.V_ = xs[:M], vs[:M]
        self.J_ = (xs[M:2 * M] - xs[2 * M:]) / (2 * LAUNCH_FD)
        self.JV_ = (vs[M:2 * M] - vs[2 * M:]) / (2 * LAUNCH_FD)
        g3 = metric(xs.reshape(-1, 2))
        acc3 = _acceleration(metric, xs.reshape(-1, 2), vs.reshape(-1, 2))
        dg3 = metric.derivative(xs.reshape(-1, 2))
        v3 = vs.reshape(-1, 2)
        P3 = np.einsum("njk,nk->nj", g3, v3).reshape(xs.shape)
        dP3 = (np.einsum("njkl,nl,nk->nj", dg3, v3, v3)
               + np.einsum("njk,nk->nj", g3, acc3)).reshape(xs.shape)
        self.A_ = acc3.reshape(xs.shape)[:M]
        self.P_, self.dP_ = P3[:M], dP3[:M]
        self.PJ_ = (P3[M:2 * M] - P3[2 * M:]) / (2 * LAUNCH_FD)
        self.dPJ_ = (dP3[M:2 * M] - dP3[2 * M:]) / (2 * LAUNCH_FD)
        flat = self.X_.reshape(-1, 2)
        self.det_ = self.J_[..., 0] * self.V_[..., 1] - self.J_[..., 1] * self.V_[..., 0]

        self.certificate_ = self._certify()
        if self.strict and self.certificate_.min_jacobian < self.j_min:
            bad = np.argwhere(self.det_ < self.j_min)
            k, l = bad[np.lexsort((bad[:, 1], bad[:, 0]))[0]]
            raise CausticError(self.launch_[k], self.t_[l], self.det_[k, l], self.certificate_)

        self.tree_ = cKDTree(flat)
        self._build_grid_fields(res)
        return self

    def _certify(self) -> ChartCertificate:
        k, l = np.unravel_index(np.argmin(self.det_), self.det_.shape)
        above = self.X_[..., 1] > 1.0
        dev = np.abs(self.V_ - np.array([0.0, 1.0]))[above]
        return ChartCertificate(
            min_jacobian=float(self.det_[k, l]),
            min_location=(float(self.launch_[k]), float(self.t_[l])),
            exit_deviation=float(dev.max()) if dev.size else 0.0,
            flatness_value=np.nan, flatness_gradient=np.nan,
            j_min=self.j_min, n_samples=int(self.det_.size))

    def _build_grid_fields(self, res: int) -> None:
        big = UniformGrid.unit_box(res, pad=3)
        pts = big.points()
        y = self._invert(pts)
        P = self._interp_P(y[:, 0], y[:, 1])
        metric = self.metric_
        inv, sq = metric_inverse_and_det(metric, pts)
        flux = sq[:, None] * np.einsum("njk,nk->nj", inv, P)
        shp = big.shape
        fx, fy = flux[:, 0].reshape(shp), flux[:, 1].reshape(shp)
        h = big.h
        div = np.zeros(shp)
        div[1:-1, 1:-1] = ((fx[2:, 1:-1] - fx[:-2, 1:-1]) + (fy[1:-1, 2:] - fy[1:-1, :-2])) / (2 * h)
        Pg = P.reshape(shp + (2,))
        hess = np.zeros(shp + (2, 2))
        hess[1:-1, 1:-1, :, 0] = (Pg[2:, 1:-1] - Pg[:-2, 1:-1]) / (2 * h)
        hess[1:-1, 1:-1, :, 1] = (Pg[1:-1, 2:] - Pg[1:-1, :-2]) / (2 * h)
        hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))

        s = (slice(1, -1), slice(1, -1))
        self.grid_ = UniformGrid.unit_box(res, pad=2)
        self.ycoord_ = y[:, 0].reshape(shp)[s]
        self.omega_ = y[:, 1].reshape(shp)[s]
        self.domega_ = Pg[s]
        self.lap_omega_ = (div / sq.reshape(shp))[s]
        self.hess_omega_ = hess[s]

        # flatness outside the ball
        X1, X2 = np.meshgrid(self.grid_.axis, self.grid_.axis, indexing="ij")
        out = np.hypot(X1, X2) >= 1.0
        cert = self.certificate_
        cert.flatness_value = float(np.max(np.abs(self.omega_ - X2)[out]))
        cert.flatness_gradient = float(np.max(np.abs(self.domega_ - np.array([0.0, 1.0]))[out]))

    # -- evaluation of F and its inverse -----------------------------------

    def _cell(self, xp, t):
        u = (xp - self.launch_[0]) / self.dlaunch_
        w = (t - self.t_[0]) / self.dt_store_
        k = np.clip(np.floor(u).astype(int), 0, len(self.launch_) - 2)
        l = np.clip(np.floor(w).astype(int), 0, len(self.t_) - 2)
        return k, l, u - k, w - l

    def _hermite(self, xp, t, F, Fx, Ft, Fxt):
        k, l, u, w = self._cell(xp, t)
        hu, hw = _h_basis(u), _h_basis(w)
        dx, dt = self.dlaunch_, self.dt_store_
        out = np.zeros((len(xp), 2))
        for a in (0, 1):
            for b in (0, 1):
                kk, ll = k + a, l + b
                bu0, bu1 = hu[2 * a], hu[2 * a + 1] * dx
                bw0, bw1 = hw[2 * b], hw[2 * b + 1] * dt
                out += ((bu0 * bw0)[:, None] * F[kk, ll] + (bu1 * bw0)[:, None] * Fx[kk, ll]
                        + (bu0 * bw1)[:, None] * Ft[kk, ll] + (bu1 * bw1)[:, None] * Fxt[kk, ll])
        return out

    def _eval_F(self, xp, t):
        return self._hermite(xp, t, self.X_, self.J_, self.V_, self.JV_)

    def curve_rows(self, xp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Chart curves with launch coordinates ``xp`` on the stored ``t`` samples.

        Returns positions and velocities of shape ``(len(xp), len(t_), 2)``,
        interpolated across launches by cubic Hermite.
        """
        k, _, u, _ = self._cell(xp, np.full_like(xp, self.t_[0]))
        hu = _h_basis(u)
        dx = self.dlaunch_
        c = [b[:, None, None] for b in (hu[0], hu[1] * dx, hu[2], hu[3] * dx)]
        X = c[0] * self.X_[k] + c[1] * self.J_[k] + c[2] * self.X_[k + 1] + c[3] * self.J_[k + 1]
        V = c[0] * self.V_[k] + c[1] * self.JV_[k] + c[2] * self.V_[k + 1] + c[3] * self.JV_[k + 1]
        return X, V

    def eval_rows(self, X: np.ndarray, V: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Evaluate curves from :meth:`curve_rows` at times ``t`` of shape ``(C, L)``."""
        w = (t - self.t_[0]) / self.dt_store_
        l = np.clip(np.floor(w).astype(int), 0, len(self.t_) - 2)
        w = (w - l)[..., None]
        dt = self.dt_store_
        g = lambda A, idx: np.take_along_axis(A, idx[..., None], axis=1)
        h0, h1, h2, h3 = _h_basis(w)
        return (h0 * g(X, l) + (h1 * dt) * g(V, l) + h2 * g(X, l + 1) + (h3 * dt) * g(V, l + 1))

    def _interp_P(self, xp, t):
        """``dω`` at ``F(x', t)`` by bicubic Hermite interpolation of the momentum covector."""
        return self._hermite(xp, t, self.P_, self.PJ_, self.dP_, self.dPJ_)

    def _invert(self, pts: np.ndarray) -> np.ndarray:
        lo = np.array([self.launch_[0], self.t_[0]])
        hi = np.array([self.launch_[-1], self.t_[-1]])
        _, idx = self.tree_.query(pts)
        k, l = np.divmod(idx, len(self.t_))
        y = np.stack([self.launch_[k], self.t_[l]], axis=1)
        active = np.ones(len(pts), dtype=bool)
        res = np.full(len(pts), np.inf)
        for _ in range(self.max_newton):
            if not active.any():
                break
            ya = y[active]
            r = self._eval_F(ya[:, 0], ya[:, 1]) - pts[active]
            d = NEWTON_FD
            Jx = (self._eval_F(ya[:, 0] + d, ya[:, 1]) - self._eval_F(ya[:, 0] - d, ya[:, 1])) / (2 * d)
            Jt = (self._eval_F(ya[:, 0], ya[:, 1] + d) - self._eval_F(ya[:, 0], ya[:, 1] - d)) / (2 * d)
            det = Jx[:, 0] * Jt[:, 1] - Jx[:, 1] * Jt[:, 0]
            step = np.stack([(Jt[:, 1] * r[:, 0] - Jt[:, 0] * r[:, 1]) / det,
                             (-Jx[:, 1] * r[:, 0] + Jx[:, 0] * r[:, 1]) / det], axis=1)
            y[active] = np.clip(ya - step, lo, hi)
            res[active] = np.max(np.abs(r), axis=1)
            done = np.max(np.abs(step), axis=1) < self.newton_tol
            ia = np.nonzero(active)[0]
            active[ia[done]] = False
        if active.any():
            r = np.max(np.abs(self._eval_F(y[:, 0], y[:, 1]) - pts), axis=1)
            bad = active & (r > 1e3 * self.newton_tol)
            if bad.any():
                i = int(np.argmax(bad))
                raise ChartInversionError(pts[i], r[i])
        return y

    def transform(self, X) -> np.ndarray:
        """Chart coordinates ``(y', ω)`` of points ``X``."""
        check_is_fitted(self, "tree_")
        pts, single = as_points(X, 2)
        lo = np.array([self.launch_[0], self.t_[0]]) + self.dlaunch_
        hi = np.array([self.launch_[-1], self.t_[-1]]) - self.dlaunch_
        if np.any(pts < lo) or np.any(pts > hi):
            raise ConfigError("point outside the chart domain")
        y = self._invert(pts)
        return y[0] if single else y

    def inverse_transform(self, Y) -> np.ndarray:
        """Evaluate ``F(y', t)``."""
        check_is_fitted(self, "tree_")
        y, single = as_points(Y, 2)
        x = self._eval_F(y[:, 0], y[:, 1])
        return x[0] if single else x

    def omega(self, X) -> np.ndarray:
        """Eikonal ``ω`` at arbitrary points (by chart inversion)."""
        y = self.transform(X)
        return y[..., 1]

    def domega(self, X) -> np.ndarray:
        """``dω`` at arbitrary points (chart inversion plus covector interpolation)."""
        pts, single = as_points(X, 2)
        y = self.transform(pts)
        P = self._interp_P(y[:, 0], y[:, 1])
        return P[0] if single else P

    def velocity(self, Y) -> np.ndarray:
        """``∂_t F(y', t)``, the unit tangent of the chart curves."""
        y, single = as_points(Y, 2)
        d = NEWTON_FD
        v = (self._eval_F(y[:, 0], y[:, 1] + d) - self._eval_F(y[:, 0], y[:, 1] - d)) / (2 * d)
        return v[0] if single else v

    def grid_field(self, name: str, pts) -> np.ndarray:
        """Bilinear interpolation of one of the gridded chart fields."""
        fields = {"omega": self.omega_, "domega": self.domega_, "lap_omega": self.lap_omega_,
                  "hess_omega": self.hess_omega_, "ycoord": self.ycoord_}
        pts, _ = as_points(pts, 2)
        return bilinear(self.grid_, fields[name], pts)

    def to_table(self) -> dict[str, np.ndarray]:
        """Per-node columns for export."""
        p = self.grid_.points()
        return {"x1": p[:, 0], "x2": p[:, 1], "y1": self.ycoord_.ravel(), "omega": self.omega_.ravel(),
                "domega1": self.domega_[..., 0].ravel(), "domega2": self.domega_[..., 1].ravel(),
                "lap_omega": self.lap_omega_.ravel()}


def build_chart(metric: MetricField, resolution: int = 129, ds: float = 1e-3, **kwargs) -> SemigeodesicChart:
    """Fit a :class:`SemigeodesicChart` to ``metric``."""
    return SemigeodesicChart(resolution=resolution, ds=ds, **kwargs).fit(metric)


def verify_no_caustics(chart: SemigeodesicChart) -> ChartCertificate:
    """Certificate with the minimum Jacobian and the exit-direction deviation."""
    check_is_fitted(chart, "certificate_")
    return chart.certificate_


@dataclass
class ResidualReport:
    max: float
    l2: float
    n_nodes: int

    def to_dict(self) -> dict:
        return {"max": self.max, "l2": self.l2, "n_nodes": self.n_nodes}


def eikonal_residual(chart: SemigeodesicChart, metric: MetricField | None = None,
                     source: str = "grid") -> ResidualReport:
    """Max and L² norm of ``|<dω, dω>_g - 1|`` over grid nodes in the closed ball.

    With ``source="grid"`` the covector is the second-order central
    difference of the gridded eikonal, so the residual measures how well the
    discrete ``ω`` solves the eikonal equation. ``source="momentum"`` uses
    the interpolated momentum covector instead.
    """
    metric = chart.metric_ if metric is None else metric
    mask = disk_mask(chart.grid_)
    pts = chart.grid_.points()[mask.ravel()]
    if source == "grid":
        w, h = chart.omega_, chart.grid_.h
        P = np.zeros(w.shape + (2,))
        P[1:-1, :, 0] = (w[2:] - w[:-2]) / (2 * h)
        P[:, 1:-1, 1] = (w[:, 2:] - w[:, :-2]) / (2 * h)
        P = P[mask]
    elif source == "momentum":
        P = chart.domega_[mask]
    else:
        raise ConfigError(f"unknown residual source {source!r}", "source")
    inv, _ = metric_inverse_and_det(metric, pts)
    r = np.abs(np.einsum("njk,nj,nk->n", inv, P, P) - 1.0)
    return ResidualReport(float(r.max()), float(np.sqrt(np.sum(r**2) * chart.grid_.h**2)), int(len(r)))


def induced_offdiagonal(chart: SemigeodesicChart) -> float:
    """Max ``|g(∂_{y'} F, ∂_t F)|`` over all stored samples (zero by the Gauss lemma)."""
    x = chart.X_.reshape(-1, 2)
    g = chart.metric_(x)
    val = np.einsum("njk,nj,nk->n", g, chart.J_.reshape(-1, 2), chart.V_.reshape(-1, 2))
    return float(np.max(np.abs(val)))


def eikonal_increment_defect(chart: SemigeodesicChart, curves: int | None = None) -> float:
    """Max over launched curves of ``|ω(γ(t_2)) - ω(γ(t_1)) - (t_2 - t_1)|``.

    ``ω`` is evaluated at the stored curve points by chart inversion.
    """
    # keep one launch spacing away from the chart edges, where transform() refuses
    m = len(chart.launch_)
    ks = np.arange(1, m - 1) if curves is None else np.linspace(1, m - 2, curves).astype(int)
    sel = (chart.t_ >= chart.t_[0] + chart.dlaunch_) & (chart.t_ <= chart.t_[-1] - chart.dlaunch_)
    t = chart.t_[sel]
    worst = 0.0
    for k in ks:
        pts = chart.X_[k, sel]
        w = chart.transform(pts)[:, 1]
        worst = max(worst, float(np.max(np.abs((w - w[0]) - (t - t[0])))))
    return worst
