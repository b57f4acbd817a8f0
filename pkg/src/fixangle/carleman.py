"""Carleman weight ``φ̂ = exp(λ φ)``, ``φ = exp(ι ψ) - (t - ω)²/2``, and its certificates.

``exp(ι ψ)`` is of order ``e^{16}`` for the default parameters, so ``φ̂``
itself overflows double precision. Everything that involves ``φ̂`` is
therefore computed in log space: level separation compares ``λ φ`` and
``h(σ)`` is returned through its logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special
from scipy.stats import qmc
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .eikonal import SemigeodesicChart
from .errors import CertificateError, ConfigError, QuadratureError
from .geometry import (ConvexityCertificate, ScalarField, check_strict_convexity, christoffel,
                       covariant_hessian, disk_samples, matrix_sqrt_inverse, quadratic_bowl)
from .validation import as_points, check_positive

BOWL_CENTER = (0.0, -2.0)
IOTA_START = 2.0
MAX_DOUBLINGS = 10
LAMBDA = 2.0
SIGMA_LADDER = (1.0, 10.0, 100.0, 1e3, 1e4)
N_PSEUDO = 100_000
LOG_GAUSS = 600.0  # above this log(2σA) the h integrand is exp(-u²) to double precision
T_RULES = ("corrected", "printed")


def default_psi_tilde(dim: int = 2) -> ScalarField:
    """``|x - x₀|²/2`` with ``x₀ = (0, ..., 0, -2)``, outside the closed ball."""
    c = np.zeros(dim)
    c[-1] = BOWL_CENTER[-1]
    return quadratic_bowl(c)


def ball_samples(density: float) -> np.ndarray:
    """Closed unit disk samples of spacing ``1/density``, including the four poles."""
    poles = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    return np.vstack([disk_samples(density, dim=2), poles])


def _polish(f, pts: np.ndarray, vals: np.ndarray) -> float:
    """Refine the sampled minimum of ``f`` over the closed disk."""
    best = float(vals.min())
    r = np.linalg.norm(pts, axis=1)
    on = r > 1 - 1e-12
    if on.any():
        k = np.flatnonzero(on)[np.argmin(vals[on])]
        th0 = np.arctan2(pts[k, 1], pts[k, 0])
        res = optimize.minimize_scalar(lambda th: float(f(np.array([[np.cos(th), np.sin(th)]]))[0]),
                                       bounds=(th0 - 0.1, th0 + 0.1), method="bounded",
                                       options={"xatol": 1e-12})
        best = min(best, float(res.fun))
    inside = ~on
    if inside.any():
        k = np.flatnonzero(inside)[np.argmin(vals[inside])]
        res = optimize.minimize(lambda z: float(f(z[None, :])[0]), pts[k], method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-15})
        if np.linalg.norm(res.x) <= 1.0:
            best = min(best, float(res.fun))
    return best


def ball_extrema(f, density: float = 32.0) -> tuple[float, float]:
    """Infimum and supremum of a vectorized scalar function over the closed unit disk.

    Dense sampling followed by a local polish of the best interior and the
    best boundary sample.
    """
    pts = ball_samples(density)
    v = np.asarray(f(pts), dtype=float)
    lo = _polish(f, pts, v)
    hi = -_polish(lambda p: -np.asarray(f(p)), pts, -v)
    return lo, hi


# ---------------------------------------------------------------------------
# the weight


class CarlemanWeight(BaseEstimator):
    """The weight built from a strictly convex ``ψ̃`` and the eikonal of a chart.

    ``fit`` takes a fitted :class:`SemigeodesicChart` (which carries the
    metric). It certifies strict convexity of ``ψ̃``, forms
    ``ψ = ψ̃ + (sup ψ̃ - 2 inf ψ̃)``, and chooses ``ι`` by doubling from
    ``iota`` until ``e^{-ιψ}|T ± ω| < 2`` holds on the closed ball.

    Parameters
    ----------
    psi_tilde : ScalarField, optional
        Base convex function; defaults to :func:`default_psi_tilde`.
    iota : float
        Starting value of ``ι``.
    lam : float
        ``λ`` in ``φ̂ = exp(λ φ)``.
    t_rule : {"corrected", "printed"}
        How ``T`` is chosen. ``"printed"`` uses
        ``sup(e^{ιψ} - inf e^{ιψ})^{1/2} + sup|ω| + 1``; ``"corrected"``
        puts a factor 2 under the root, which is what level separation of
        ``φ = e^{ιψ} - (t-ω)²/2`` actually needs.
    density : float
        Sampling density over the ball (samples per unit length).
    escalate : bool
        Double ``ι`` until the bound on ``e^{-ιψ}|T ± ω|`` holds.
    max_doublings : int
    require_convexity : bool
        Raise when the convexity certificate fails.

    Attributes
    ----------
    shift_, psi_min_, psi_max_, iota_, T_, omega_sup_ : float
    convexity_ : ConvexityCertificate
    invariant_ : float
        ``max e^{-ιψ}|T ± ω|`` over the samples at the returned ``ι``.
    """

    def __init__(self, psi_tilde: ScalarField | None = None, iota: float = IOTA_START,
                 lam: float = LAMBDA, t_rule: str = "corrected", density: float = 32.0,
                 escalate: bool = True, max_doublings: int = MAX_DOUBLINGS,
                 require_convexity: bool = True):
        self.psi_tilde = psi_tilde
        self.iota = iota
        self.lam = lam
        self.t_rule = t_rule
        self.density = density
        self.escalate = escalate
        self.max_doublings = max_doublings
        self.require_convexity = require_convexity

    def fit(self, X: SemigeodesicChart, y=None) -> "CarlemanWeight":
        chart = X
        check_is_fitted(chart, "omega_")
        if self.t_rule not in T_RULES:
            raise ConfigError(f"unknown T rule {self.t_rule!r}", "t_rule")
        check_positive(self.iota, "iota")
        check_positive(self.lam, "lam")
        self.chart_ = chart
        self.metric_ = chart.metric_
        self.psi_tilde_ = self.psi_tilde if self.psi_tilde is not None else default_psi_tilde(2)
        self.convexity_ = check_strict_convexity(self.metric_, self.psi_tilde_, self.density)
        if self.require_convexity and not self.convexity_.passed:
            raise CertificateError("psi_tilde is not strictly convex without critical points on the ball",
                                   self.convexity_)
        lo, hi = ball_extrema(self.psi_tilde_, self.density)
        self.shift_ = hi - 2.0 * lo
        self.psi_min_, self.psi_max_ = lo + self.shift_, hi + self.shift_
        self.samples_ = ball_samples(self.density)
        self.psi_samples_ = self.psi_tilde_(self.samples_) + self.shift_
        self.omega_samples_ = chart.grid_field("omega", self.samples_)
        self.omega_sup_ = float(np.max(np.abs(self.omega_samples_)))

        iota = float(self.iota)
        for k in range(self.max_doublings + 1):
            T = self.horizon(iota)
            inv = self._invariant(iota, T)
            if inv < 2.0 or not self.escalate:
                break
            if k == self.max_doublings:
                raise CertificateError(f"iota escalation exhausted at iota={iota:g} (max e^(-iota psi)|T±w| = {inv:.3g})")
            iota *= 2.0
        self.iota_, self.T_, self.invariant_ = iota, T, inv
        return self

    # -- scalar ingredients ---------------------------------------------------

    def horizon(self, iota: float, rule: str | None = None) -> float:
        """``T`` for a given ``ι`` under the configured (or given) rule."""
        rule = self.t_rule if rule is None else rule
        with np.errstate(over="raise"):
            try:
                spread = np.exp(iota * self.psi_max_) - np.exp(iota * self.psi_min_)
            except FloatingPointError:
                raise CertificateError(f"exp(iota*psi) overflows at iota={iota:g}") from None
        factor = 2.0 if rule == "corrected" else 1.0
        return float(np.sqrt(factor * spread) + self.omega_sup_ + 1.0)

    def _invariant(self, iota: float, T: float) -> float:
        e = np.exp(-iota * self.psi_samples_)
        w = self.omega_samples_
        return float(np.max(e * np.maximum(np.abs(T + w), np.abs(T - w))))

    def psi(self, x) -> np.ndarray:
        return self.psi_tilde_(x) + self.shift_

    def omega(self, x) -> np.ndarray:
        pts, single = as_points(x, 2)
        w = self.chart_.grid_field("omega", pts)
        return w[0] if single else w

    def phi(self, x, t) -> np.ndarray:
        """``e^{ιψ(x)} - (t - ω(x))²/2``."""
        check_is_fitted(self, "iota_")
        return np.exp(self.iota_ * self.psi(x)) - 0.5 * (np.asarray(t) - self.omega(x)) ** 2

    def log_phi_hat(self, x, t) -> np.ndarray:
        """``log φ̂ = λ φ``."""
        return self.lam * self.phi(x, t)

    def phi_hat(self, x, t) -> np.ndarray:
        """``exp(λ φ)``; overflows to ``inf`` for realistic parameters."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_phi_hat(x, t))

    def summary(self) -> dict:
        check_is_fitted(self, "iota_")
        return {"shift": self.shift_, "psi_min": self.psi_min_, "psi_max": self.psi_max_,
                "iota": self.iota_, "lam": self.lam, "T": self.T_, "t_rule": self.t_rule,
                "omega_sup": self.omega_sup_, "invariant_max": self.invariant_,
                "convexity": self.convexity_.to_dict()}


def build_weight(chart: SemigeodesicChart, psi_tilde: ScalarField | None = None,
                 iota: float = IOTA_START, lam: float = LAMBDA, **kwargs) -> CarlemanWeight:
    """Fit a :class:`CarlemanWeight` on ``chart``."""
    return CarlemanWeight(psi_tilde=psi_tilde, iota=iota, lam=lam, **kwargs).fit(chart)


def compute_T(weight: CarlemanWeight, iota: float | None = None, rule: str | None = None) -> float:
    """The horizon ``T`` (at the fitted ``ι`` unless another is given)."""
    check_is_fitted(weight, "iota_")
    return weight.T_ if iota is None and rule is None else weight.horizon(weight.iota_ if iota is None else iota, rule)


# ---------------------------------------------------------------------------
# level separation


@dataclass
class LevelCertificate:
    """``inf φ`` on the wavefront surface against ``sup φ`` on ``t = ±T``."""

    inf_gamma: float
    sup_top: float
    T: float
    lam: float

    @property
    def margin(self) -> float:
        """Separation in ``φ``."""
        return self.inf_gamma - self.sup_top

    @property
    def log_margin(self) -> float:
        """``log inf φ̂ - log sup φ̂``, i.e. ``λ`` times :attr:`margin`."""
        return self.lam * self.margin

    @property
    def passed(self) -> bool:
        return self.margin > 0

    def to_dict(self) -> dict:
        return {"inf_gamma_phi": self.inf_gamma, "sup_top_phi": self.sup_top, "T": self.T,
                "margin_phi": self.margin, "margin_log_phi_hat": self.log_margin, "passed": self.passed}


def check_level_separation(weight: CarlemanWeight, T: float | None = None,
                           density: float | None = None) -> LevelCertificate:
    """Compare the weight on ``Γ_g`` with the weight on ``Γ_T ∪ Γ_{-T}`` by dense sampling."""
    check_is_fitted(weight, "iota_")
    T = weight.T_ if T is None else float(T)
    if density is None:
        pts, psi, w = weight.samples_, weight.psi_samples_, weight.omega_samples_
    else:
        pts = ball_samples(density)
        psi, w = weight.psi(pts), weight.omega(pts)
    e = np.exp(weight.iota_ * psi)
    inf_gamma = float(min(e.min(), np.exp(weight.iota_ * weight.psi_min_)))
    top = e - 0.5 * np.minimum(T - w, T + w) ** 2
    return LevelCertificate(inf_gamma, float(top.max()), T, weight.lam)


# ---------------------------------------------------------------------------
# pseudoconvexity


def pseudoconvexity_bracket(weight: CarlemanWeight, x, t, xdot) -> np.ndarray:
    """Lower bound of ``{p, {p, φ}}`` along the velocity ``xdot``.

    ``[ι e^{ιψ} ∇²ψ + (t-ω) ∇²ω - dω ⊗ dω - g](ẋ, ẋ)`` with covariant
    Hessians. The nonnegative term ``ι² e^{ιψ}(dψ·ẋ)²`` (equivalently
    ``e^{-ιψ}(t-ω)²(ṫ - dω·ẋ)²`` on the constraint set) is left out.
    """
    check_is_fitted(weight, "iota_")
    pts, _ = as_points(x, 2)
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(pts),))
    v = np.asarray(xdot, dtype=float).reshape(len(pts), 2)
    M = _bracket_matrix(weight, pts, t)
    return np.einsum("njk,nj,nk->n", M, v, v)


def _omega_jets(weight: CarlemanWeight, pts: np.ndarray):
    ch = weight.chart_
    w = ch.grid_field("omega", pts)
    dw = ch.grid_field("domega", pts)
    Hw = ch.grid_field("hess_omega", pts) - np.einsum("ni,nijk->njk", dw, christoffel(weight.metric_, pts))
    return w, dw, Hw


def _bracket_matrix(weight, pts, t):
    w, dw, Hw = _omega_jets(weight, pts)
    e = np.exp(weight.iota_ * weight.psi(pts))
    Hpsi = covariant_hessian(weight.metric_, weight.psi_tilde_, pts)
    g = weight.metric_(pts)
    return ((weight.iota_ * e)[:, None, None] * Hpsi + (t - w)[:, None, None] * Hw
            - np.einsum("nj,nk->njk", dw, dw) - g)


@dataclass
class PseudoconvexityCertificate:
    """Sampled minimum of the bracket over admissible characteristic covectors."""

    min_value: float
    min_normalized: float
    n_samples: int
    n_admissible: int
    n_skipped: int
    worst_point: list = field(default_factory=list)

    @property
    def incomplete(self) -> bool:
        return self.n_skipped > 0.01 * self.n_samples

    @property
    def passed(self) -> bool:
        return self.n_admissible > 0 and self.min_value > 0 and not self.incomplete

    def to_dict(self) -> dict:
        return {"min_value": self.min_value, "min_normalized": self.min_normalized,
                "n_samples": self.n_samples, "n_admissible": self.n_admissible,
                "n_skipped": self.n_skipped, "incomplete": self.incomplete,
                "worst_point": self.worst_point, "passed": self.passed}


def check_pseudoconvexity(weight: CarlemanWeight, n_samples: int = N_PSEUDO, seed: int = 0,
                          chunk: int = 20_000) -> PseudoconvexityCertificate:
    """Sample ``(x, t) ∈ Q₊`` and characteristic covectors with ``{p, φ} = 0``.

    Points come from a scrambled Sobol sequence: ``x`` uniform in the
    disk, ``t`` uniform in ``[ω(x), T]`` and the sign of ``τ``. On
    ``p = 0`` with ``|ξ|_g = |τ| = 1`` write ``ξ = g^{1/2} e(θ)``; then
    ``ẋ = 2 g^{-1/2} e(θ)`` and ``{p, φ} = 0`` reads
    ``b · e(θ) = -τ (t - ω)`` with ``b = g^{-1/2}(ι e^{ιψ} dψ + (t-ω) dω)``,
    whose two roots in ``θ`` are explicit. A sample without a root has no
    admissible covector and is counted as skipped.
    """
    check_is_fitted(weight, "iota_")
    sob = qmc.Sobol(d=4, scramble=True, seed=seed)
    U = sob.random_base2(int(np.ceil(np.log2(max(n_samples, 2)))))[:n_samples]
    best, best_norm, worst = np.inf, np.inf, []
    n_adm = n_skip = 0
    for c in range(0, n_samples, chunk):
        u = U[c:c + chunk]
        r, a = np.sqrt(u[:, 0]), 2 * np.pi * u[:, 1]
        pts = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
        w, dw, Hw = _omega_jets(weight, pts)
        t = w + u[:, 2] * (weight.T_ - w)
        tau = np.where(u[:, 3] < 0.5, -1.0, 1.0)
        e = np.exp(weight.iota_ * weight.psi(pts))
        cov = (weight.iota_ * e)[:, None] * weight.psi_tilde_.gradient(pts) + (t - w)[:, None] * dw
        h = matrix_sqrt_inverse(weight.metric_, pts)
        b = np.einsum("njk,nk->nj", h, cov)
        rho = np.linalg.norm(b, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rhs = -tau * (t - w) / rho
        ok = np.abs(rhs) <= 1.0
        n_skip += int(np.sum(~ok))
        n_adm += int(np.sum(ok))
        if not ok.any():
            continue
        pts, t, b, rhs, h, e = pts[ok], t[ok], b[ok], rhs[ok], h[ok], e[ok]
        M = _bracket_matrix(weight, pts, t)
        th0 = np.arctan2(b[:, 1], b[:, 0])
        dth = np.arccos(rhs)
        raw = np.full(len(pts), np.inf)
        norm = np.full(len(pts), np.inf)
        for sgn in (1.0, -1.0):
            th = th0 + sgn * dth
            v = 2 * np.einsum("njk,nk->nj", h, np.stack([np.cos(th), np.sin(th)], axis=1))
            val = np.einsum("njk,nj,nk->n", M, v, v)
            raw = np.minimum(raw, val)
            norm = np.minimum(norm, val / (e * np.sum(v * v, axis=1)))
        k = int(np.argmin(raw))
        if raw[k] < best:
            best, worst = float(raw[k]), [float(pts[k, 0]), float(pts[k, 1]), float(t[k])]
        best_norm = min(best_norm, float(norm.min()))
    return PseudoconvexityCertificate(best, best_norm, n_samples, n_adm, n_skip, worst)


# ---------------------------------------------------------------------------
# h(σ)


def _log_column(log_c: float, lam: float, lo: float, hi: float, point) -> float:
    """``log ∫_lo^hi exp(-c (1 - e^{-λ s²/2})) ds`` with ``log c`` given."""
    # s = κ u with κ² = 2/(cλ): the exponent becomes c·expm1(-u²/c)
    log_kappa = 0.5 * (np.log(2.0 / lam) - log_c)
    with np.errstate(over="ignore"):
        inv_kappa = np.exp(-log_kappa)
    ulo, uhi = lo * inv_kappa, hi * inv_kappa
    if log_c > LOG_GAUSS:
        val = 0.5 * np.sqrt(np.pi) * (special.erf(uhi) - special.erf(ulo))
        return float(log_kappa + np.log(val))
    c = np.exp(log_c)
    f = lambda u: np.exp(c * np.expm1(-u * u / c))
    pieces = [(ulo, min(0.0, uhi)), (max(0.0, ulo), uhi)]
    total = 0.0
    for a, b in pieces:
        if b <= a:
            continue
        a_, b_ = max(a, -60.0) if c > 1e4 else a, min(b, 60.0) if c > 1e4 else b
        res = integrate.quad(f, a_, b_, limit=200, epsabs=0.0, epsrel=1e-11, full_output=1)
        if len(res) > 3:
            raise QuadratureError(point, res[3].splitlines()[0] if res[3] else "no convergence")
        total += res[0]
    return float(log_kappa + np.log(total))


@dataclass
class HValue:
    sigma: float
    log_h: float
    argmax: list

    @property
    def h(self) -> float:
        return float(np.exp(self.log_h))

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "log_h": self.log_h, "h": self.h, "argmax": self.argmax}


def h_column(weight: CarlemanWeight, x, sigma: float) -> float:
    """``log ∫_{-T}^{T} exp(2σ[φ̂(x,t) - φ̂(x,ω(x))]) dt`` at a single point."""
    check_is_fitted(weight, "iota_")
    check_positive(sigma, "sigma")
    p = np.asarray(x, dtype=float).reshape(1, 2)
    return _column_at(weight, float(weight.psi(p)[0]), float(weight.omega(p)[0]), sigma, p[0])


def _column_at(weight, psi, w, sigma, point):
    log_c = np.log(2 * sigma) + weight.lam * np.exp(weight.iota_ * psi)
    return _log_column(log_c, weight.lam, -weight.T_ - w, weight.T_ - w, point)


def compute_h(weight: CarlemanWeight, sigma: float, density: float = 16.0) -> HValue:
    """``h(σ) = sup_x ∫_{-T}^{T} exp(2σ[φ̂(x,t) - φ̂(x,ω(x))]) dt``, in log form.

    With ``A = φ̂(x, ω(x)) = exp(λ e^{ιψ})`` the integrand is
    ``exp(-2σA(1 - exp(-λ(t-ω)²/2)))``. It is integrated by adaptive
    quadrature after rescaling ``t - ω`` by the peak width; once
    ``log(2σA)`` exceeds ``LOG_GAUSS`` the rescaled integrand equals
    ``exp(-u²)`` to double precision and the error function is used.
    """
    check_is_fitted(weight, "iota_")
    check_positive(sigma, "sigma")
    pts = ball_samples(density)
    psi, w = weight.psi(pts), weight.omega(pts)
    logs = np.array([_column_at(weight, psi[i], w[i], sigma, pts[i]) for i in range(len(pts))])
    k = int(np.argmax(logs))
    return HValue(float(sigma), float(logs[k]), [float(pts[k, 0]), float(pts[k, 1])])


def h_bound(weight: CarlemanWeight, sigma: float) -> float:
    """``√π e^{1/4} σ^{-1/2} + 2(T + sup|ω|) e^{-σ}``."""
    return float(np.sqrt(np.pi) * np.exp(0.25) / np.sqrt(sigma)
                 + 2 * (weight.T_ + weight.omega_sup_) * np.exp(-sigma))


@dataclass
class HCertificate:
    values: list
    log_bounds: list

    @property
    def within_bound(self) -> bool:
        return all(v.log_h <= b for v, b in zip(self.values, self.log_bounds))

    @property
    def decreasing(self) -> bool:
        lh = [v.log_h for v in self.values]
        return all(b < a for a, b in zip(lh, lh[1:]))

    @property
    def log_decay(self) -> float:
        """``log(h(σ_last) / h(σ_first))``."""
        return self.values[-1].log_h - self.values[0].log_h

    @property
    def passed(self) -> bool:
        return bool(self.within_bound and self.decreasing and self.log_decay < np.log(0.05))

    def to_dict(self) -> dict:
        return {"values": [v.to_dict() for v in self.values], "log_bounds": self.log_bounds,
                "within_bound": self.within_bound, "decreasing": self.decreasing,
                "decay_ratio": float(np.exp(self.log_decay)), "passed": self.passed}


def check_h(weight: CarlemanWeight, sigmas=SIGMA_LADDER, density: float = 16.0) -> HCertificate:
    """Evaluate ``h`` on a σ ladder against the explicit bound."""
    vals = [compute_h(weight, s, density) for s in sigmas]
    return HCertificate(vals, [float(np.log(h_bound(weight, s))) for s in sigmas])


@dataclass
class WeightCertificate:
    """All weight certificates together."""

    summary: dict
    convexity: ConvexityCertificate
    separation: LevelCertificate
    pseudoconvexity: PseudoconvexityCertificate
    h: HCertificate

    @property
    def invariant_ok(self) -> bool:
        return self.summary["invariant_max"] < 2.0

    @property
    def passed(self) -> bool:
        return (self.convexity.passed and self.separation.passed and self.pseudoconvexity.passed
                and self.h.passed and self.invariant_ok)

    def to_dict(self) -> dict:
        return {"weight": self.summary, "separation": self.separation.to_dict(),
                "pseudoconvexity": self.pseudoconvexity.to_dict(), "h": self.h.to_dict(),
                "invariant_ok": self.invariant_ok, "passed": self.passed}


def certify_weight(weight: CarlemanWeight, n_samples: int = N_PSEUDO, seed: int = 0,
                   sigmas=SIGMA_LADDER) -> WeightCertificate:
    """Run every check on a fitted weight."""
    return WeightCertificate(weight.summary(), weight.convexity_, check_level_separation(weight),
                             check_pseudoconvexity(weight, n_samples, seed), check_h(weight, sigmas))
