"""Transport along the wavefront surface ``t = ω(x)``.

Characteristic curves on the surface are the chart curves
``s -> (F(y', s), s)``; the amplitude ``a_{-1}``, the wavefront value
``u(x, ω(x))`` and the higher coefficients ``a_j`` are obtained by
cumulative Simpson quadrature along them. The tangent fields ``X`` and
``X^m`` and the quadratic-form identities they satisfy live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid

from .eikonal import SemigeodesicChart
from .errors import ConfigError
from .geometry import MetricField, PotentialField, matrix_sqrt_inverse, metric_inverse_and_det
from .grid import SplineField, UniformGrid, bicubic, grid_laplace_beltrami
from .validation import as_points

DEFAULT_DS = 1e-3
CHUNK = 192


# ---------------------------------------------------------------------------
# tangent fields


def tangent_field_X(chart: SemigeodesicChart, x, domega=None) -> np.ndarray:
    """Components ``(X^t, X^1, ..., X^n)`` of ``X = ∂_t + g^{jk} ω_j ∂_k``.

    ``domega`` may be supplied (for example the exact covector on stored
    curve samples); otherwise it is interpolated from the chart.
    """
    pts, single = as_points(x, 2)
    P = chart.domega(pts) if domega is None else np.asarray(domega, dtype=float).reshape(pts.shape)
    inv, _ = metric_inverse_and_det(chart.metric_, pts)
    out = np.concatenate([np.ones((len(pts), 1)), np.einsum("njk,nj->nk", inv, P)], axis=1)
    return out[0] if single else out


def tangent_fields_Xm(chart: SemigeodesicChart, x, domega=None) -> np.ndarray:
    """Fields ``X^m = ω_j h^{jm} ∂_t + h^{mk} ∂_k`` with ``h = g^{-1/2}``.

    Returns an array of shape ``(N, n, n+1)``: row ``m`` holds the ``∂_t``
    coefficient followed by the spatial ones.
    """
    pts, single = as_points(x, 2)
    P = chart.domega(pts) if domega is None else np.asarray(domega, dtype=float).reshape(pts.shape)
    h = matrix_sqrt_inverse(chart.metric_, pts)
    out = np.concatenate([np.einsum("nj,njm->nm", P, h)[..., None], h], axis=2)
    return out[0] if single else out


def apply_field(vec: np.ndarray, dt: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Apply space-time vectors to a function with gradient ``(dt, dx)``."""
    return vec[..., 0] * dt + np.einsum("...k,...k->...", vec[..., 1:], dx)


def tangency_residual(chart: SemigeodesicChart, x, domega=None) -> tuple[float, float]:
    """Max ``|X(t-ω)|`` and ``max_m |X^m(t-ω)|`` at the given surface points."""
    pts, _ = as_points(x, 2)
    P = chart.domega(pts) if domega is None else domega
    X = tangent_field_X(chart, pts, P)
    Xm = tangent_fields_Xm(chart, pts, P)
    one = np.ones(len(pts))
    rx = apply_field(X, one, -P)
    rm = apply_field(Xm, one[:, None], -P[:, None, :])
    return float(np.max(np.abs(rx))), float(np.max(np.abs(rm)))


@dataclass
class FieldJet:
    """Time and space first derivatives of a test function at a batch of points."""

    dt: np.ndarray
    dx: np.ndarray


def xm_quadratic_form(chart, x, a: FieldJet, b: FieldJet, domega) -> np.ndarray:
    """``Σ_m (X^m α)(X^m β)``."""
    Xm = tangent_fields_Xm(chart, x, domega)
    return np.sum(apply_field(Xm, a.dt[:, None], a.dx[:, None, :])
                  * apply_field(Xm, b.dt[:, None], b.dx[:, None, :]), axis=1)


def _inner(inv, u, v):
    return np.einsum("njk,nj,nk->n", inv, u, v)


def representation_time_split(metric: MetricField, x, a: FieldJet, b: FieldJet, domega) -> np.ndarray:
    """``<dα,dβ> + α_t β_t + ω_j g^{jk}(α_k β_t + β_k α_t)``."""
    inv, _ = metric_inverse_and_det(metric, x)
    return (_inner(inv, a.dx, b.dx) + a.dt * b.dt
            + _inner(inv, domega, a.dx) * b.dt + _inner(inv, domega, b.dx) * a.dt)


def representation_characteristic(metric: MetricField, x, a: FieldJet, b: FieldJet, domega) -> np.ndarray:
    """``<dα,dβ> - α_t β_t + α_t (Xβ) + β_t (Xα)``."""
    inv, _ = metric_inverse_and_det(metric, x)
    Xa = a.dt + _inner(inv, domega, a.dx)
    Xb = b.dt + _inner(inv, domega, b.dx)
    return _inner(inv, a.dx, b.dx) - a.dt * b.dt + a.dt * Xb + b.dt * Xa


def representation_projected(metric: MetricField, x, a: FieldJet, b: FieldJet, domega) -> np.ndarray:
    """``(Xα)(Xβ) + <dα - <dω,dα>dω, dβ - <dω,dβ>dω>``."""
    inv, _ = metric_inverse_and_det(metric, x)
    Xa = a.dt + _inner(inv, domega, a.dx)
    Xb = b.dt + _inner(inv, domega, b.dx)
    pa = a.dx - _inner(inv, domega, a.dx)[:, None] * domega
    pb = b.dx - _inner(inv, domega, b.dx)[:, None] * domega
    return Xa * Xb + _inner(inv, pa, pb)


# ---------------------------------------------------------------------------
# characteristics


def characteristic_points(chart: SemigeodesicChart, y1: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Spatial points ``F(y', t)``; exact vertical lines below ``x_n = -1``.

    ``y1`` has shape ``(C,)`` or ``(C, 1)`` and ``t`` shape ``(C, L)``.
    """
    t = np.atleast_2d(t)
    y1 = np.asarray(y1, dtype=float).reshape(-1)
    X, V = chart.curve_rows(y1)
    out = chart.eval_rows(X, V, np.maximum(t, chart.t_[0]))
    low = t <= -1.0
    yb = np.broadcast_to(y1[:, None], t.shape)
    out[low, 0] = yb[low]
    out[low, 1] = t[low]
    return out


@dataclass
class CharacteristicCurve:
    """A curve ``s -> (x(s), ω(x(s)))`` on the wavefront surface."""

    s: np.ndarray
    x: np.ndarray
    t: np.ndarray
    launch: float

    def velocity(self, chart: SemigeodesicChart) -> np.ndarray:
        return chart.velocity(np.stack([np.full_like(self.t, self.launch), self.t], axis=1))


def characteristic_curve(chart: SemigeodesicChart, x, ds: float = DEFAULT_DS, back: float | None = None,
                         forward: float = 0.0) -> CharacteristicCurve:
    """Characteristic through ``(x, ω(x))``, sampled backwards to ``x_n < -1``."""
    y = chart.transform(np.asarray(x, dtype=float))
    back = y[1] + 1.0 + ds if back is None else back
    k0 = int(np.ceil(back / ds))
    k1 = int(np.floor(forward / ds))
    s = ds * np.arange(-k0, k1 + 1)
    t = y[1] + s
    return CharacteristicCurve(s, characteristic_points(chart, np.array([y[0]]), t[None, :])[0], t, float(y[0]))


def _node_sampling(h: float, ds: float | None) -> tuple[float, int]:
    m = int(np.ceil(h / (DEFAULT_DS if ds is None else ds)))
    return h / m, m


def _integrate_nodes(chart: SemigeodesicChart, y: np.ndarray, integrand, ds: float,
                     offsets: np.ndarray, rule: str = "simpson") -> np.ndarray:
    """Cumulative integrals of ``integrand`` along the characteristics of nodes.

    Parameters
    ----------
    y : ndarray (N, 2)
        Chart coordinates ``(y', ω)`` of the nodes.
    integrand : callable
        Maps points ``(M, 2)`` to values; it must vanish for ``x_n <= -1``.
    offsets : ndarray of int
        Sample offsets (in units of ``ds``) relative to each node.

    Returns
    -------
    ndarray (N, len(offsets))
        ``∫_{-∞}^{s_node + k ds} integrand`` for each offset ``k``.
    """
    kmax = int(offsets.max())
    order = np.argsort(y[:, 1], kind="stable")
    out = np.empty((len(y), len(offsets)))
    for c0 in range(0, len(y), CHUNK):
        idx = order[c0:c0 + CHUNK]
        yc = y[idx]
        K = max(int(np.ceil((yc[:, 1].max() + 1.0) / ds)), 0) + 2 + max(0, -int(offsets.min()))
        steps = np.arange(-K, kmax + 1)
        t = yc[:, 1:2] + ds * steps[None, :]
        pts = characteristic_points(chart, yc[:, 0:1], t)
        vals = np.zeros(t.shape)
        live = (t > -1.0) & (np.einsum("...i,...i->...", pts, pts) < 1.0)
        if live.any():
            vals[live] = integrand(pts[live])
        if rule == "simpson":
            cum = cumulative_simpson(vals, dx=ds, axis=1, initial=0.0)
        else:
            cum = cumulative_trapezoid(vals, dx=ds, axis=1, initial=0.0)
        out[idx] = cum[:, K + offsets]
    return out


# ---------------------------------------------------------------------------
# wavefront data


STENCIL = ("-h", "-2ds", "-ds", "0", "+ds", "+2ds", "+h")


@dataclass
class WavefrontData:
    """Transport quantities on the chart grid.

    Attributes
    ----------
    grid : UniformGrid
    a_minus1 : ndarray
        Leading amplitude ``a_{-1}``.
    u : ndarray
        Wavefront value ``u(x, ω(x))``.
    lap_ratio : ndarray
        ``Δ_g a_{-1} / a_{-1}``.
    w_stencil : ndarray (n, n, 7)
        ``u/a_{-1}`` along the characteristic at parameter offsets
        ``(-h, -2ds, -ds, 0, ds, 2ds, h)``.
    stencil_points : ndarray (n, n, 2, 2)
        Spatial points at offsets ``-h`` and ``+h``.
    ds : float
        Quadrature step; ``h`` is an integer multiple of it.
    levels : list of ndarray
        Higher transport coefficients ``a_1..a_N`` when requested.
    """

    grid: UniformGrid
    a_minus1: np.ndarray
    u: np.ndarray
    lap_ratio: np.ndarray
    w_stencil: np.ndarray
    stencil_points: np.ndarray
    omega: np.ndarray
    ycoord: np.ndarray
    ds: float
    levels: list = field(default_factory=list)

    @property
    def h(self) -> float:
        return self.grid.h

    def to_table(self) -> dict[str, np.ndarray]:
        p = self.grid.points()
        return {"x1": p[:, 0], "x2": p[:, 1], "omega": self.omega.ravel(),
                "a_minus1": self.a_minus1.ravel(), "u": self.u.ravel(), "lap_ratio": self.lap_ratio.ravel()}


def _grid_coords(chart: SemigeodesicChart) -> np.ndarray:
    return np.stack([chart.ycoord_.ravel(), chart.omega_.ravel()], axis=1)


def _lap_omega_integrand(chart):
    cache = chart.__dict__.setdefault("_amplitude_cache", {})
    if "lap_spline" not in cache:
        cache["lap_spline"] = SplineField(chart.grid_, chart.lap_omega_)
    return cache["lap_spline"]


def a_minus1_field(chart: SemigeodesicChart, ds: float | None = None, rule: str = "simpson") -> np.ndarray:
    """``a_{-1} = exp(-½ ∫ Δ_g ω)`` at every chart grid node (cached per step and rule)."""
    ds, m = _node_sampling(chart.grid_.h, ds)
    cache = chart.__dict__.setdefault("_amplitude_cache", {})
    key = ("a", ds, rule)
    if key not in cache:
        if chart.metric_.flat:
            cache[key] = np.ones(chart.grid_.shape)
        else:
            y = _grid_coords(chart)
            I = _integrate_nodes(chart, y, _lap_omega_integrand(chart), ds, np.array([0]), rule)[:, 0]
            cache[key] = np.exp(-0.5 * I).reshape(chart.grid_.shape)
    return cache[key]


def amplitude_a_minus1(chart: SemigeodesicChart, x, ds: float | None = None, rule: str = "simpson") -> np.ndarray:
    """``a_{-1}`` at arbitrary points by quadrature along their own characteristics."""
    pts, single = as_points(x, 2)
    ds, _ = _node_sampling(chart.grid_.h, ds)
    if chart.metric_.flat:
        val = np.ones(len(pts))
    else:
        y = chart.transform(pts).reshape(-1, 2)
        val = np.exp(-0.5 * _integrate_nodes(chart, y, _lap_omega_integrand(chart), ds, np.array([0]), rule)[:, 0])
    return val[0] if single else val


def _lap_ratio(chart, a):
    return grid_laplace_beltrami(chart.metric_, chart.grid_, a) / a


def compute_wavefront(chart: SemigeodesicChart, q: PotentialField, ds: float | None = None,
                      levels: int = 0) -> WavefrontData:
    """Transport quantities at every node of the chart grid.

    Parameters
    ----------
    chart : SemigeodesicChart
    q : PotentialField
    ds : float, optional
        Requested quadrature step (rounded down so that ``h/ds`` is an integer).
    levels : int
        Number of higher coefficients ``a_1..a_N`` to add (``N <= 2``).
    """
    if levels > 2:
        raise ConfigError("hierarchy depth N > 2 loses too many derivatives on a finite grid", "levels")
    grid = chart.grid_
    ds, m = _node_sampling(grid.h, ds)
    a = a_minus1_field(chart, ds)
    lr = _lap_ratio(chart, a)
    y = _grid_coords(chart)

    lr_spl = SplineField(grid, lr)

    def f(p):
        return -lr_spl(p) + q(p)

    offs = np.array([-m, -2, -1, 0, 1, 2, m])
    I = _integrate_nodes(chart, y, f, ds, offs)
    w = (-0.5 * I).reshape(grid.shape + (len(offs),))
    u = a * w[..., 3]
    t = y[:, 1:2] + np.array([-grid.h, grid.h])[None, :]
    sp = characteristic_points(chart, y[:, 0], t).reshape(grid.shape + (2, 2))
    wf = WavefrontData(grid, a, u, lr, w, sp, chart.omega_.copy(), chart.ycoord_.copy(), ds)
    if levels:
        wf.levels = solve_transport_hierarchy(chart, q, levels, ds=ds, wavefront=wf)[1:]
    return wf


def wavefront_u(chart: SemigeodesicChart, q: PotentialField, x, ds: float | None = None) -> np.ndarray:
    """``u(x, ω(x)) = -½ a_{-1}(x) ∫ (-Δ_g a_{-1}/a_{-1} + q)`` at arbitrary points."""
    pts, single = as_points(x, 2)
    grid = chart.grid_
    ds, _ = _node_sampling(grid.h, ds)
    a = a_minus1_field(chart, ds)
    lr = _lap_ratio(chart, a)
    y = chart.transform(pts).reshape(-1, 2)
    lr_spl = SplineField(grid, lr)
    I = _integrate_nodes(chart, y, lambda p: -lr_spl(p) + q(p), ds, np.array([0]))[:, 0]
    val = -0.5 * amplitude_a_minus1(chart, pts, ds) * I
    return val[0] if single else val


def transport_derivative_identity(wavefront: WavefrontData, q: PotentialField) -> np.ndarray:
    """Residual ``|d/ds (u/a_{-1}) + ½(-Δ_g a_{-1}/a_{-1} + q)|`` at every node.

    The derivative is the fourth-order central difference of the sampled
    ``u/a_{-1}`` along the characteristic.
    """
    w = wavefront.w_stencil
    dw = (-w[..., 5] + 8 * w[..., 4] - 8 * w[..., 2] + w[..., 1]) / (12 * wavefront.ds)
    qv = q(wavefront.grid.points()).reshape(wavefront.grid.shape)
    return np.abs(dw + 0.5 * (-wavefront.lap_ratio + qv))


def solve_transport_hierarchy(chart: SemigeodesicChart, q: PotentialField, N: int,
                              ds: float | None = None, wavefront: WavefrontData | None = None) -> list[np.ndarray]:
    """Coefficients ``a_0..a_N`` on the chart grid.

    Each level solves ``d/ds a_j + ½ Δ_g ω a_j = -½ (-Δ_g a_{j-1} + q a_{j-1})``
    along characteristics with zero incoming data, so
    ``a_j = a_{-1} ∫ source / a_{-1}``.
    """
    if N > 2:
        raise ConfigError("hierarchy depth N > 2 loses too many derivatives on a finite grid", "N")
    if N < 0:
        raise ConfigError("N must be non-negative", "N")
    grid = chart.grid_
    ds, _ = _node_sampling(grid.h, ds)
    wf = compute_wavefront(chart, q, ds) if wavefront is None else wavefront
    a = wf.a_minus1
    out = [wf.u]
    y = _grid_coords(chart)
    qg = q(grid.points()).reshape(grid.shape)
    for _ in range(N):
        prev = out[-1]
        src = (-grid_laplace_beltrami(chart.metric_, grid, prev) + qg * prev) / a
        I = _integrate_nodes(chart, y, SplineField(grid, src), ds, np.array([0]))[:, 0]
        out.append(a * (-0.5 * I).reshape(grid.shape))
    return out


def interpolate_wavefront(wavefront: WavefrontData, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Cubic-spline interpolation of a scalar field on the wavefront grid."""
    return bicubic(wavefront.grid, values, pts)
