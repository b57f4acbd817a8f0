import numpy as np
import pytest
from scipy.integrate import simpson

from fixangle.carleman import (
    LOG_GAUSS,
    CarlemanWeight,
    _log_column,
    build_weight,
    certify_weight,
    check_h,
    check_level_separation,
    check_pseudoconvexity,
    compute_T,
    compute_h,
    h_bound,
    h_column,
)
from fixangle.errors import CertificateError, ConfigError
from fixangle.geometry import ScalarField, linear_function


def constant_field(c=1.0):
    return ScalarField(value=lambda x: np.full(len(x), c),
                       gradient_fn=lambda x: np.zeros_like(x),
                       hessian_fn=lambda x: np.zeros((len(x), 2, 2)))


@pytest.fixture(scope="module")
def weight(chart_euclid_33):
    return build_weight(chart_euclid_33)


class TestWeight:
    def test_closed_form_shift(self, weight):
        # |x - (0,-2)|²/2 ranges over [1/2, 9/2] on the disk
        assert weight.shift_ == pytest.approx(3.5, abs=1e-9)
        assert weight.psi_min_ == pytest.approx(4.0, abs=1e-9)
        assert weight.psi_max_ == pytest.approx(8.0, abs=1e-9)

    def test_horizon_closed_form(self, weight):
        T = np.sqrt(2 * (np.exp(16) - np.exp(8))) + 2
        assert weight.T_ == pytest.approx(T, rel=1e-9)
        assert compute_T(weight, rule="printed") < weight.T_

    def test_T_monotone_in_iota(self, weight):
        Ts = [compute_T(weight, iota=i) for i in (0.5, 1.0, 2.0, 4.0)]
        assert all(b > a for a, b in zip(Ts, Ts[1:]))

    def test_constant_psi(self, chart_euclid_33):
        w = build_weight(chart_euclid_33, psi_tilde=constant_field(), escalate=False,
                         require_convexity=False)
        assert w.T_ == pytest.approx(w.omega_sup_ + 1.0)
        assert w.omega_sup_ == pytest.approx(1.0)

    def test_invariant(self, weight):
        assert weight.invariant_ < 2.0

    def test_convexity_required(self, chart_euclid_33):
        with pytest.raises(CertificateError):
            build_weight(chart_euclid_33, psi_tilde=linear_function([0.0, 1.0]))

    def test_bad_rule(self, chart_euclid_33):
        with pytest.raises(ConfigError):
            build_weight(chart_euclid_33, t_rule="other")

    def test_needs_fitted_chart(self):
        from sklearn.exceptions import NotFittedError
        from fixangle.eikonal import SemigeodesicChart
        with pytest.raises(NotFittedError):
            CarlemanWeight().fit(SemigeodesicChart(17))

    def test_phi_on_wavefront(self, weight, rng):
        x = rng.uniform(-0.7, 0.7, (50, 2))
        w = weight.omega(x)
        e = np.exp(weight.iota_ * weight.psi(x))
        assert np.allclose(weight.phi(x, w), e, rtol=1e-14)
        assert np.allclose(weight.log_phi_hat(x, w), weight.lam * e, rtol=1e-14)
        # e^{λ e^{ιψ}} is far beyond double range
        assert np.all(np.isinf(weight.phi_hat(x, w)))

    def test_phi_decreases_away_from_front(self, weight):
        x = np.array([[0.2, 0.1]])
        w = weight.omega(x)[0]
        v = [weight.phi(x, w + d)[0] for d in (0.0, 1.0, 2.0)]
        assert v[0] > v[1] > v[2]


class TestSeparation:
    def test_passes(self, weight):
        cert = check_level_separation(weight)
        assert cert.passed and cert.log_margin == pytest.approx(weight.lam * cert.margin)

    def test_fails_for_short_horizon(self, weight):
        assert not check_level_separation(weight, T=3.0).passed

    def test_printed_rule_margin(self, weight):
        # the printed T only just separates; the corrected one leaves a wide margin
        Tp = compute_T(weight, rule="printed")
        assert check_level_separation(weight, T=Tp).margin < check_level_separation(weight).margin

    def test_density(self, weight):
        a = check_level_separation(weight, density=16.0)
        b = check_level_separation(weight)
        assert a.inf_gamma == pytest.approx(b.inf_gamma)


class TestPseudoconvexity:
    def test_euclidean(self, weight):
        cert = check_pseudoconvexity(weight, 20_000)
        assert cert.passed and cert.n_skipped == 0

    def test_small_iota_fails(self, chart_euclid_33):
        w = build_weight(chart_euclid_33, iota=0.01, escalate=False)
        assert not check_pseudoconvexity(w, 20_000).passed

    def test_product(self, chart_product_33):
        w = build_weight(chart_product_33)
        assert check_pseudoconvexity(w, 20_000).passed

    def test_seeded(self, weight):
        a = check_pseudoconvexity(weight, 4096, seed=3)
        b = check_pseudoconvexity(weight, 4096, seed=3)
        assert a.min_value == b.min_value


class TestH:
    @pytest.mark.parametrize("log_c", [-2.0, 0.0, 1.0, 3.0])
    def test_column_simpson_oracle(self, log_c):
        lam, lo, hi = 2.0, -3.0, 2.5
        s = np.linspace(lo, hi, 400_001)
        f = np.exp(-np.exp(log_c) * (1 - np.exp(-lam * s**2 / 2)))
        ref = np.log(simpson(f, x=s))
        assert _log_column(log_c, lam, lo, hi, None) == pytest.approx(ref, abs=1e-8)

    def test_column_gaussian_limit(self):
        # for large c the column tends to sqrt(2π/(cλ))
        lam, log_c = 2.0, 30.0
        ref = 0.5 * np.log(2 * np.pi / lam) - 0.5 * log_c
        assert _log_column(log_c, lam, -5.0, 5.0, None) == pytest.approx(ref, abs=1e-9)

    def test_column_continuous_at_switch(self):
        a = _log_column(LOG_GAUSS - 1e-6, 2.0, -5.0, 5.0, None)
        b = _log_column(LOG_GAUSS + 1e-6, 2.0, -5.0, 5.0, None)
        # the column scales as c^{-1/2}
        assert a - 0.5e-6 == pytest.approx(b + 0.5e-6, abs=1e-10)

    def test_h_column_matches_sup(self, weight):
        hv = compute_h(weight, 10.0)
        assert h_column(weight, hv.argmax, 10.0) == pytest.approx(hv.log_h)

    def test_bound_and_decay(self, weight):
        cert = check_h(weight)
        assert cert.within_bound and cert.decreasing and cert.passed

    def test_h_bound_formula(self, weight):
        s = 4.0
        ref = np.sqrt(np.pi) * np.exp(0.25) / 2 + 2 * (weight.T_ + weight.omega_sup_) * np.exp(-4)
        assert h_bound(weight, s) == pytest.approx(ref)

    def test_sigma_positive(self, weight):
        with pytest.raises(ConfigError):
            compute_h(weight, 0.0)


def test_certify_euclidean(weight):
    cert = certify_weight(weight, n_samples=8192)
    assert cert.passed
    d = cert.to_dict()
    assert d["passed"] and d["weight"]["t_rule"] == "corrected"
