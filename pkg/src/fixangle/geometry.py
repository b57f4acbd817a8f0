"""Evaluable metric and potential fields and first-order Riemannian quantities.

Every field is a vectorized evaluator over a batch of points ``(N, n)``.
Metrics equal the identity outside the unit ball ``B`` and potentials vanish
there; the built-in families guarantee this exactly by using a compactly
supported bump.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateMetricError
from .validation import as_points, check_positive, check_vector

FD_STEP = 1e-4
PD_TOL = 1e-8

Array = np.ndarray


# ---------------------------------------------------------------------------
# smooth compactly supported profiles


def bump(z: Array) -> Array:
    """Standard mollifier profile ``exp(1 - 1/(1 - |z|^2))``, zero for ``|z| >= 1``.

    Normalized so that ``bump(0) = 1``. ``z`` has shape ``(N, n)``.
    """
    r2 = np.einsum("...i,...i->...", z, z)
    out = np.zeros_like(r2)
    m = r2 < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - r2[m]))
    return out


def bump_grad(z: Array) -> Array:
    """Gradient of :func:`bump` with respect to ``z``."""
    r2 = np.einsum("...i,...i->...", z, z)
    out = np.zeros_like(z)
    m = r2 < 1.0
    s = 1.0 - r2[m]
    b = np.exp(1.0 - 1.0 / s)
    out[m] = (-2.0 * b / s**2)[:, None] * z[m]
    return out


def bump_hessian(z: Array) -> Array:
    """Hessian of :func:`bump` with respect to ``z``, shape ``(N, n, n)``."""
    n = z.shape[-1]
    r2 = np.einsum("...i,...i->...", z, z)
    out = np.zeros(z.shape + (n,))
    m = r2 < 1.0
    s = 1.0 - r2[m]
    b = np.exp(1.0 - 1.0 / s)
    zz = np.einsum("ni,nj->nij", z[m], z[m])
    eye = np.eye(n)[None]
    coef_zz = (4.0 / s**4 - 8.0 / s**3)[:, None, None]
    out[m] = b[:, None, None] * (coef_zz * zz - (2.0 / s**2)[:, None, None] * eye)
    return out


def smooth_step(s: Array) -> Array:
    """C-infinity step rising from 0 at ``s <= 0`` to 1 at ``s >= 1``."""
    s = np.asarray(s, dtype=float)

    def f(t):
        out = np.zeros_like(t)
        m = t > 0
        out[m] = np.exp(-1.0 / t[m])
        return out

    a, b = f(s), f(1.0 - s)
    return a / (a + b)


def radial_cutoff(x: Array, inner: float = 0.8, outer: float = 1.0) -> Array:
    """Smooth cutoff equal to 1 for ``|x| <= inner`` and 0 for ``|x| >= outer``."""
    r = np.sqrt(np.einsum("...i,...i->...", x, x))
    return 1.0 - smooth_step((r - inner) / (outer - inner))


# ---------------------------------------------------------------------------
# metric fields


class MetricField:
    """A Riemannian metric on R^n that is Euclidean outside the unit ball.

    Parameters
    ----------
    components : callable
        Maps points ``(N, n)`` to symmetric matrices ``(N, n, n)``.
    dim : int
        Spatial dimension (2 or 3).
    derivative : callable, optional
        Maps points to ``dg[..., j, k, l] = d_l g_jk``. Central differences
        with step ``FD_STEP`` are used when absent.
    name : str
        Family name, used in reports.
    params : dict, optional
        Family parameters, echoed in reports and manifests.
    flat : bool
        True for the Euclidean metric; enables exact shortcuts.
    extras : dict, optional
        Family-specific closed forms (for example the exact eikonal of a
        coordinate-declared product metric). Used only by oracles.
    """

    def __init__(
        self,
        components: Callable[[Array], Array],
        dim: int = 2,
        derivative: Callable[[Array], Array] | None = None,
        name: str = "custom",
        params: dict | None = None,
        flat: bool = False,
        extras: dict | None = None,
        support_radius: float = 1.0,
    ):
        if dim not in (2, 3):
            raise ConfigError(f"dimension must be 2 or 3, got {dim}", "dimension")
        self._components = components
        self._derivative = derivative
        self.dim = dim
        self.name = name
        self.params = dict(params or {})
        self.flat = flat
        self.extras = dict(extras or {})
        self.support_radius = support_radius

    def __repr__(self) -> str:
        return f"MetricField(name={self.name!r}, dim={self.dim}, params={self.params})"

    def __call__(self, x) -> Array:
        pts, single = as_points(x, self.dim)
        g = self._components(pts)
        return g[0] if single else g

    def derivative(self, x) -> Array:
        """First derivatives ``dg[..., j, k, l] = d_l g_jk``."""
        pts, single = as_points(x, self.dim)
        if self.flat:
            dg = np.zeros((len(pts), self.dim, self.dim, self.dim))
        elif self._derivative is not None:
            dg = self._derivative(pts)
        else:
            dg = np.empty((len(pts), self.dim, self.dim, self.dim))
            for l in range(self.dim):
                e = np.zeros(self.dim)
                e[l] = FD_STEP
                dg[..., l] = (self._components(pts + e) - self._components(pts - e)) / (2 * FD_STEP)
        return dg[0] if single else dg

    @property
    def has_analytic_derivative(self) -> bool:
        return self.flat or self._derivative is not None

    def reflected(self) -> "MetricField":
        """The metric expressed in reflected coordinates ``x -> (x', -x_n)``."""
        R = np.ones(self.dim)
        R[-1] = -1.0
        RR = np.outer(R, R)
        RRR = np.einsum("j,k,l->jkl", R, R, R)
        base = self

        def comp(x):
            return base._components(x * R) * RR

        deriv = None
        if base._derivative is not None:
            def deriv(x):
                return base._derivative(x * R) * RRR

        return MetricField(comp, self.dim, deriv, name=self.name + ":reflected",
                           params=self.params, flat=self.flat,
                           support_radius=self.support_radius)


def _inverse_and_det(g: Array) -> tuple[Array, Array, Array]:
    """Inverse, determinant and smallest eigenvalue of a batch of SPD matrices."""
    n = g.shape[-1]
    if n == 2:
        a, b, d = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
        det = a * d - b * b
        inv = np.empty_like(g)
        inv[..., 0, 0] = d / det
        inv[..., 1, 1] = a / det
        inv[..., 0, 1] = inv[..., 1, 0] = -b / det
        half = 0.5 * (a + d)
        lam_min = half - np.sqrt(np.maximum(half * half - det, 0.0))
        return inv, det, lam_min
    lam = np.linalg.eigvalsh(g)
    return np.linalg.inv(g), np.linalg.det(g), lam[..., 0]


def _check_pd(lam_min: Array, pts: Array) -> None:
    bad = ~(lam_min >= PD_TOL)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DegenerateMetricError(pts[i], lam_min[i])


def metric_inverse_and_det(metric: MetricField, x) -> tuple[Array, Array]:
    """Inverse metric ``g^{jk}`` and volume factor ``|g|^{1/2}``.

    Raises
    ------
    DegenerateMetricError
        If the smallest eigenvalue drops below ``PD_TOL`` at any point.
    """
    pts, single = as_points(x, metric.dim)
    g = metric._components(pts)
    inv, det, lam = _inverse_and_det(g)
    _check_pd(lam, pts)
    sq = np.sqrt(det)
    return (inv[0], sq[0]) if single else (inv, sq)


def christoffel(metric: MetricField, x) -> Array:
    """Levi-Civita symbols ``Gamma[..., i, j, k]`` for ``Γ^i_{jk}``.

    Points outside the support radius (plus the difference step) get exact
    zeros without evaluating the metric.
    """
    pts, single = as_points(x, metric.dim)
    n = metric.dim
    out = np.zeros((len(pts), n, n, n))
    if not metric.flat:
        r2 = np.einsum("ni,ni->n", pts, pts)
        m = r2 < (metric.support_radius + 2 * FD_STEP) ** 2
        if np.any(m):
            p = pts[m]
            inv, _, lam = _inverse_and_det(metric._components(p))
            _check_pd(lam, p)
            dg = metric.derivative(p)
            # lowered symbols Γ_{ljk} = ½(∂_j g_kl + ∂_k g_jl - ∂_l g_jk)
            low = 0.5 * (np.einsum("nklj->nljk", dg) + np.einsum("njlk->nljk", dg)
                         - np.einsum("njkl->nljk", dg))
            out[m] = np.einsum("nil,nljk->nijk", inv, low)
    return out[0] if single else out


def g_inner(metric: MetricField, du, dv, x) -> Array:
    """Inner product of covectors ``g^{jk} du_j dv_k``."""
    pts, single = as_points(x, metric.dim)
    inv, _ = metric_inverse_and_det(metric, pts)
    du = np.broadcast_to(np.asarray(du, dtype=float), pts.shape)
    dv = np.broadcast_to(np.asarray(dv, dtype=float), pts.shape)
    val = np.einsum("njk,nj,nk->n", inv, du, dv)
    return val[0] if single else val


def matrix_sqrt_inverse(metric: MetricField, x) -> Array:
    """Symmetric ``h = g^{-1/2}``, so that ``h @ h = g^{-1}``."""
    pts, single = as_points(x, metric.dim)
    g = metric._components(pts)
    try:
        lam, vec = np.linalg.eigh(g)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh rarely fails on SPD input
        raise DegenerateMetricError(pts[0], np.nan) from exc
    _check_pd(lam[:, 0], pts)
    h = np.einsum("nij,nj,nkj->nik", vec, lam**-0.5, vec)
    return h[0] if single else h


# ---------------------------------------------------------------------------
# scalar test fields


@dataclass
class ScalarField:
    """A scalar function with optional analytic derivatives.

    Missing derivatives fall back to central differences with step ``step``.
    """

    value: Callable[[Array], Array]
    gradient_fn: Callable[[Array], Array] | None = None
    hessian_fn: Callable[[Array], Array] | None = None
    step: float = 1e-4
    name: str = "custom"

    def __call__(self, x) -> Array:
        pts, single = as_points(x)
        v = self.value(pts)
        return v[0] if single else v

    def gradient(self, x) -> Array:
        pts, single = as_points(x)
        if self.gradient_fn is not None:
            g = self.gradient_fn(pts)
        else:
            n = pts.shape[1]
            g = np.empty_like(pts)
            for k in range(n):
                e = np.zeros(n)
                e[k] = self.step
                g[:, k] = (self.value(pts + e) - self.value(pts - e)) / (2 * self.step)
        return g[0] if single else g

    def hessian(self, x) -> Array:
        pts, single = as_points(x)
        if self.hessian_fn is not None:
            H = self.hessian_fn(pts)
        else:
            n = pts.shape[1]
            H = np.empty((len(pts), n, n))
            for k in range(n):
                e = np.zeros(n)
                e[k] = self.step
                H[:, :, k] = (self.gradient(pts + e) - self.gradient(pts - e)) / (2 * self.step)
            H = 0.5 * (H + np.swapaxes(H, 1, 2))
        return H[0] if single else H


def quadratic_bowl(center) -> ScalarField:
    """``|x - c|^2 / 2``; strictly convex with identity Hessian."""
    c = np.asarray(center, dtype=float)
    return ScalarField(
        value=lambda x: 0.5 * np.sum((x - c) ** 2, axis=-1),
        gradient_fn=lambda x: x - c,
        hessian_fn=lambda x: np.broadcast_to(np.eye(len(c)), (len(x), len(c), len(c))).copy(),
        name="quadratic_bowl",
    )


def linear_function(direction) -> ScalarField:
    """``d . x``; zero Hessian, used as a convexity counterexample."""
    d = np.asarray(direction, dtype=float)
    return ScalarField(
        value=lambda x: x @ d,
        gradient_fn=lambda x: np.broadcast_to(d, x.shape).copy(),
        hessian_fn=lambda x: np.zeros((len(x), len(d), len(d))),
        name="linear",
    )


def laplace_beltrami(metric: MetricField, u, x, step: float = 1e-3) -> Array:
    """``Δ_g u = |g|^{-1/2} ∂_j(|g|^{1/2} g^{jk} ∂_k u)`` by central differences.

    Parameters
    ----------
    metric : MetricField
    u : ScalarField or callable
        The field; its analytic gradient is used when available.
    x : array_like
        Evaluation points.
    step : float
        Outer difference step; the result is second order in ``step``.
    """
    pts, single = as_points(x, metric.dim)
    if not isinstance(u, ScalarField):
        u = ScalarField(u, step=step)
    n = metric.dim

    def flux(y, j):
        inv, sq = metric_inverse_and_det(metric, y)
        return sq * np.einsum("nk,nk->n", inv[:, j, :], u.gradient(y))

    div = np.zeros(len(pts))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        div += (flux(pts + e, j) - flux(pts - e, j)) / (2 * step)
    _, sq = metric_inverse_and_det(metric, pts)
    out = div / sq
    return out[0] if single else out


# ---------------------------------------------------------------------------
# convexity certificate


def disk_samples(density: float, radius: float = 1.0, dim: int = 2) -> Array:
    """Grid points of spacing ``1/density`` inside the closed ball plus boundary points."""
    h = 1.0 / density
    ax = np.arange(-radius, radius + 0.5 * h, h)
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    pts = pts[np.sum(pts**2, axis=1) <= radius**2]
    if dim == 2:
        m = max(16, int(np.ceil(2 * np.pi * radius * density)))
        th = 2 * np.pi * np.arange(m) / m
        pts = np.vstack([pts, radius * np.stack([np.cos(th), np.sin(th)], axis=1)])
    return pts


@dataclass
class ConvexityCertificate:
    """Result of :func:`check_strict_convexity`."""

    min_eigenvalue: float
    min_gradient: float
    n_samples: int
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.min_eigenvalue > 0 and self.min_gradient > 0

    def to_dict(self) -> dict:
        return {"min_eigenvalue": self.min_eigenvalue, "min_gradient": self.min_gradient,
                "n_samples": self.n_samples, "passed": self.passed,
                "violations": [list(map(float, p)) for p in self.violations[:20]]}


def covariant_hessian(metric: MetricField, psi: ScalarField, x) -> Array:
    """``ψ_jk - ψ_i Γ^i_jk`` at the points ``x``."""
    pts, single = as_points(x, metric.dim)
    H = psi.hessian(pts) - np.einsum("ni,nijk->njk", psi.gradient(pts), christoffel(metric, pts))
    return H[0] if single else H


def check_strict_convexity(metric: MetricField, psi: ScalarField, density: float = 32.0) -> ConvexityCertificate:
    """Sample the covariant Hessian of ``psi`` and its gradient over the closed ball.

    Returns the smallest Hessian eigenvalue and the smallest Euclidean
    gradient norm. Both must be positive for a pass; offending points are
    listed in ``violations``.
    """
    check_positive(density, "density")
    pts = disk_samples(density, dim=metric.dim)
    lam = np.linalg.eigvalsh(covariant_hessian(metric, psi, pts))[:, 0]
    grad = np.linalg.norm(psi.gradient(pts), axis=1)
    bad = (lam <= 0) | (grad <= 0)
    return ConvexityCertificate(float(lam.min()), float(grad.min()), len(pts), list(pts[bad]))


# ---------------------------------------------------------------------------
# metric families


def euclidean_metric(dim: int = 2) -> MetricField:
    """The flat metric."""
    return MetricField(lambda x: np.broadcast_to(np.eye(dim), (len(x), dim, dim)).copy(),
                       dim, name="euclidean", params={}, flat=True,
                       extras={"eikonal": lambda x: x[:, -1].copy(),
                               "a_minus1": lambda x: np.ones(len(x))})


def _bump_params(center, radius, dim, name):
    c = np.zeros(dim) if center is None else check_vector(center, dim, f"{name}.center")
    r = check_positive(radius, f"{name}.radius")
    if np.linalg.norm(c) + r > 1.0 + 1e-12:
        raise ConfigError(f"bump support |c| + r = {np.linalg.norm(c) + r:.3f} leaves the unit ball", name)
    return c, r


def product_metric(amplitude: float = 0.05, center=None, radius: float = 0.9,
                   dim: int = 2, symmetric: bool = False) -> MetricField:
    """Block metric ``diag((1 + a b(x)) I_{n-1}, 1)`` with a compact bump ``b``.

    The coordinate ``x_n`` is then the eikonal. With ``symmetric=True`` the
    bump must be centred on ``x_n = 0`` so that the metric is even in ``x_n``.
    """
    c, r = _bump_params(center, radius, dim, "metric")
    if symmetric and abs(c[-1]) > 0:
        raise ConfigError("symmetric family requires center[-1] = 0", "metric.center")
    a = float(amplitude)
    if a <= -1.0 + 1e-6:
        raise ConfigError("amplitude must exceed -1 for positive definiteness", "metric.amplitude")

    def comp(x):
        f = 1.0 + a * bump((x - c) / r)
        g = np.zeros((len(x), dim, dim))
        for i in range(dim - 1):
            g[:, i, i] = f
        g[:, -1, -1] = 1.0
        return g

    def deriv(x):
        df = a * bump_grad((x - c) / r) / r
        dg = np.zeros((len(x), dim, dim, dim))
        for i in range(dim - 1):
            dg[:, i, i, :] = df
        return dg

    def a_minus1(x):
        return (1.0 + a * bump((x - c) / r)) ** (-(dim - 1) / 4.0)

    name = "symmetric_product" if symmetric else "product"
    return MetricField(comp, dim, deriv, name=name,
                       params={"amplitude": a, "center": c.tolist(), "radius": r},
                       extras={"eikonal": lambda x: x[:, -1].copy(), "a_minus1": a_minus1,
                               "warp_free": True})


def symmetric_product_metric(amplitude: float = 0.05, radius: float = 0.9, center=None,
                             dim: int = 2) -> MetricField:
    """Product metric whose bump is even in ``x_n``."""
    c = np.zeros(dim) if center is None else check_vector(center, dim, "metric.center")
    return product_metric(amplitude, c, radius, dim, symmetric=True)


def conformal_metric(amplitude: float = 0.05, center=None, radius: float = 0.9, dim: int = 2) -> MetricField:
    """Isotropic ``(1 + a b(x)) I``. Rays bend, so this family is not a product metric."""
    c, r = _bump_params(center, radius, dim, "metric")
    a = float(amplitude)
    if a <= -1.0 + 1e-6:
        raise ConfigError("amplitude must exceed -1 for positive definiteness", "metric.amplitude")

    def comp(x):
        f = 1.0 + a * bump((x - c) / r)
        return f[:, None, None] * np.eye(dim)[None]

    def deriv(x):
        df = a * bump_grad((x - c) / r) / r
        return np.eye(dim)[None, :, :, None] * df[:, None, None, :]

    return MetricField(comp, dim, deriv, name="conformal",
                       params={"amplitude": a, "center": c.tolist(), "radius": r})


_BUMP_GRAD_MAX = 2.1704  # max |∇b| of the normalized mollifier profile


def warped_product_metric(amplitude: float = 0.05, warp: float = 0.05, center=None,
                          radius: float = 0.9, warp_center=None, warp_radius: float = 0.8,
                          warp_direction=None, dim: int = 2) -> MetricField:
    """Product metric declared in curvilinear coordinates.

    With ``y = Φ(x) = x + w b((x - c_w)/r_w) d`` and the block metric
    ``G(y) = diag((1 + a b((y - c)/r)) I, 1)``, the field is the pull-back
    ``g = DΦ^T G(Φ(x)) DΦ``. In ``y`` the metric is a product, so the exact
    eikonal is ``ω(x) = Φ_n(x)``, while in ``x`` the geodesics bend and ω is
    nonlinear.
    """
    c, r = _bump_params(center, radius, dim, "metric")
    cw, rw = _bump_params(warp_center, warp_radius, dim, "metric.warp")
    if warp_direction is None:
        d = np.ones(dim)
    else:
        d = check_vector(warp_direction, dim, "metric.warp_direction")
    d = d / np.linalg.norm(d)
    a, w = float(amplitude), float(warp)
    if abs(w) * _BUMP_GRAD_MAX / rw >= 0.5:
        raise ConfigError("warp too large: coordinate change must stay a diffeomorphism", "metric.warp")
    if a <= -1.0 + 1e-6:
        raise ConfigError("amplitude must exceed -1 for positive definiteness", "metric.amplitude")

    def phi(x):
        return x + w * bump((x - cw) / rw)[:, None] * d

    def dphi(x):
        return np.eye(dim)[None] + w * np.einsum("i,nj->nij", d, bump_grad((x - cw) / rw) / rw)

    def comp(x):
        y = phi(x)
        f = 1.0 + a * bump((y - c) / r)
        G = np.zeros((len(x), dim, dim))
        for i in range(dim - 1):
            G[:, i, i] = f
        G[:, -1, -1] = 1.0
        D = dphi(x)
        return np.swapaxes(D, 1, 2) @ G @ D

    def deriv(x):
        z = (x - cw) / rw
        D = dphi(x)
        dD = w * np.einsum("i,njm->nijm", d, bump_hessian(z) / rw**2)
        y = phi(x)
        f = 1.0 + a * bump((y - c) / r)
        df = np.einsum("np,npm->nm", a * bump_grad((y - c) / r) / r, D)
        G = np.zeros((len(x), dim, dim))
        dG = np.zeros((len(x), dim, dim, dim))
        for i in range(dim - 1):
            G[:, i, i] = f
            dG[:, i, i, :] = df
        G[:, -1, -1] = 1.0
        term = np.einsum("nijm,nil->njlm", dD, G @ D)
        mid = np.einsum("nikm,nkl->nilm", dG, D)
        return term + np.swapaxes(term, 1, 2) + np.einsum("nij,nilm->njlm", D, mid)

    def eikonal(x):
        return phi(x)[:, -1]

    def a_minus1(x):
        return (1.0 + a * bump((phi(x) - c) / r)) ** (-(dim - 1) / 4.0)

    return MetricField(comp, dim, deriv, name="warped_product",
                       params={"amplitude": a, "warp": w, "center": c.tolist(), "radius": r,
                               "warp_center": cw.tolist(), "warp_radius": rw,
                               "warp_direction": d.tolist()},
                       extras={"eikonal": eikonal, "coordinates": phi, "a_minus1": a_minus1})


METRIC_FAMILIES: dict[str, tuple[Callable[..., MetricField], str]] = {
    "euclidean": (euclidean_metric, "flat metric"),
    "product": (product_metric, "diag((1 + a bump) I, 1); x_n is the eikonal"),
    "symmetric_product": (symmetric_product_metric, "product metric even in x_n"),
    "warped_product": (warped_product_metric, "product metric pulled back by a bump warp; curved rays"),
    "conformal": (conformal_metric, "isotropic (1 + a bump) I; rays bend, not certified"),
}


def make_metric(family: str, dim: int = 2, **params) -> MetricField:
    """Construct a metric from a family name and keyword parameters."""
    if family not in METRIC_FAMILIES:
        raise ConfigError(f"unknown metric family {family!r}; choose from {sorted(METRIC_FAMILIES)}",
                          "metric.family")
    factory = METRIC_FAMILIES[family][0]
    try:
        return factory(dim=dim, **params)
    except TypeError as exc:
        raise ConfigError(str(exc), "metric") from exc


def metric_asymmetry(metric: MetricField, n_samples: int = 4096, seed: int = 0) -> float:
    """Max over samples of ``|g(x', x_n) - R g(x', -x_n) R|`` (zero for even metrics)."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_samples, metric.dim))
    R = np.ones(metric.dim)
    R[-1] = -1.0
    diff = metric(pts) - metric(pts * R) * np.outer(R, R)
    return float(np.max(np.abs(diff)))


def metric_support_defect(metric: MetricField, n_samples: int = 4096, seed: int = 0) -> float:
    """Max ``|g - I|`` over random samples with ``|x|`` in [1, 2]."""
    pts = _shell_samples(metric.dim, n_samples, seed)
    return float(np.max(np.abs(metric(pts) - np.eye(metric.dim))))


def _shell_samples(dim, n_samples, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n_samples, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(1.0, 2.0, size=(n_samples, 1))


# ---------------------------------------------------------------------------
# potentials


class PotentialField:
    """A real potential supported in the closed unit ball.

    Supports ``+``, ``-`` and scalar ``*`` so that differences ``q1 - q2``
    are again potentials.
    """

    def __init__(self, func: Callable[[Array], Array], name: str = "custom",
                 params: dict | None = None, is_zero: bool = False):
        self._func = func
        self.name = name
        self.params = dict(params or {})
        self.is_zero = is_zero

    def __repr__(self) -> str:
        return f"PotentialField(name={self.name!r}, params={self.params})"

    def __call__(self, x) -> Array:
        pts, single = as_points(x)
        if self.is_zero:
            v = np.zeros(len(pts))
        else:
            v = np.asarray(self._func(pts), dtype=float)
        return v[0] if single else v

    def __add__(self, other: "PotentialField") -> "PotentialField":
        if other.is_zero:
            return self
        if self.is_zero:
            return other
        return PotentialField(lambda x: self._func(x) + other._func(x),
                              name=f"({self.name}+{other.name})",
                              params={"terms": [self.params, other.params]})

    def __neg__(self) -> "PotentialField":
        return self * -1.0

    def __sub__(self, other: "PotentialField") -> "PotentialField":
        return self + (-other)

    def __mul__(self, s: float) -> "PotentialField":
        s = float(s)
        if self.is_zero or s == 0.0:
            return zero_potential()
        return PotentialField(lambda x: s * self._func(x), name=f"{s:g}*{self.name}",
                              params={"scale": s, "base": self.params})

    __rmul__ = __mul__


def zero_potential() -> PotentialField:
    return PotentialField(lambda x: np.zeros(len(x)), name="zero", params={}, is_zero=True)


def gaussian_potential(amplitude: float = 1.0, center=(0.0, 0.0), width: float = 0.3,
                       cutoff: tuple[float, float] = (0.8, 1.0)) -> PotentialField:
    """``A exp(-|x-c|^2/w^2)`` times a smooth radial cutoff that vanishes at ``|x| >= 1``."""
    c = np.asarray(center, dtype=float)
    w = check_positive(width, "potential.width")
    A = float(amplitude)
    lo, hi = cutoff
    if not 0 < lo < hi <= 1.0:
        raise ConfigError("cutoff must satisfy 0 < inner < outer <= 1", "potential.cutoff")

    def f(x):
        return A * np.exp(-np.sum((x - c) ** 2, axis=1) / w**2) * radial_cutoff(x, lo, hi)

    return PotentialField(f, name="gaussian",
                          params={"amplitude": A, "center": c.tolist(), "width": w, "cutoff": [lo, hi]})


def bump_potential(amplitude: float = 1.0, center=(0.0, 0.0), radius: float = 0.5) -> PotentialField:
    """``A b((x-c)/r)`` with the compact mollifier profile."""
    c = np.asarray(center, dtype=float)
    r = check_positive(radius, "potential.radius")
    if np.linalg.norm(c) + r > 1.0 + 1e-12:
        raise ConfigError("bump potential leaves the unit ball", "potential")
    A = float(amplitude)
    return PotentialField(lambda x: A * bump((x - c) / r), name="bump",
                          params={"amplitude": A, "center": c.tolist(), "radius": r})


def random_potential(rng: np.random.Generator, n_bumps: int = 2, dim: int = 2,
                     amplitude: tuple[float, float] = (0.5, 1.5),
                     width: tuple[float, float] = (0.2, 0.35),
                     center_radius: float = 0.45) -> PotentialField:
    """Sum of ``n_bumps`` Gaussians with random centres, widths and amplitudes."""
    terms = zero_potential()
    for _ in range(n_bumps):
        v = rng.normal(size=dim)
        v *= center_radius * rng.uniform() ** (1.0 / dim) / np.linalg.norm(v)
        terms = terms + gaussian_potential(rng.uniform(*amplitude), v, rng.uniform(*width))
    return terms


POTENTIAL_FAMILIES: dict[str, tuple[Callable[..., PotentialField], str]] = {
    "zero": (lambda **kw: zero_potential(), "q = 0"),
    "gaussian": (gaussian_potential, "A exp(-|x-c|^2/w^2) with a smooth cutoff at |x| = 1"),
    "bump": (bump_potential, "A bump((x-c)/r)"),
}


def make_potential(family: str, **params) -> PotentialField:
    if family not in POTENTIAL_FAMILIES:
        raise ConfigError(f"unknown potential family {family!r}; choose from {sorted(POTENTIAL_FAMILIES)}",
                          "potential.family")
    try:
        return POTENTIAL_FAMILIES[family][0](**params)
    except TypeError as exc:
        raise ConfigError(str(exc), "potential") from exc


def potential_asymmetry(q: PotentialField, dim: int = 2, n_samples: int = 4096, seed: int = 0) -> float:
    """Max ``|q(x', x_n) - q(x', -x_n)|`` over random samples."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_samples, dim))
    R = np.ones(dim)
    R[-1] = -1.0
    return float(np.max(np.abs(q(pts) - q(pts * R))))


def potential_support_defect(q: PotentialField, dim: int = 2, n_samples: int = 4096, seed: int = 0) -> float:
    """Max ``|q|`` over random samples with ``|x|`` in [1, 2]."""
    return float(np.max(np.abs(q(_shell_samples(dim, n_samples, seed)))))
