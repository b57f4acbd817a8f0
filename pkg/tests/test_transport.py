import numpy as np
import pytest
from scipy.integrate import quad

from fixangle.eikonal import build_chart
from fixangle.errors import ConfigError
from fixangle.geometry import gaussian_potential, make_metric, metric_inverse_and_det, zero_potential
from fixangle.grid import bicubic, disk_mask
from fixangle.transport import (
    FieldJet,
    a_minus1_field,
    amplitude_a_minus1,
    apply_field,
    characteristic_curve,
    compute_wavefront,
    representation_characteristic,
    representation_projected,
    representation_time_split,
    solve_transport_hierarchy,
    tangency_residual,
    tangent_field_X,
    tangent_fields_Xm,
    transport_derivative_identity,
    wavefront_u,
    xm_quadratic_form,
)

Q = gaussian_potential(1.0, (0.1, 0.05), 0.3)
PTS = np.array([[0.1, 0.3], [-0.3, 0.5], [0.5, -0.2], [0.0, 0.9]])


def curve_samples(chart, n, rng):
    """Random stored curve samples inside the ball with their exact covectors."""
    X = chart.X_.reshape(-1, 2)
    P = chart.P_.reshape(-1, 2)
    inside = np.nonzero(np.sum(X**2, 1) < 1)[0]
    pick = rng.choice(inside, n, replace=False)
    return X[pick], P[pick]


def analytic_pair(rng, n):
    """Jets of α = sin(k·x + c t + p) and β = exp(l·x + d t) at random (x, t)."""
    k, l = rng.normal(size=2), 0.5 * rng.normal(size=2)
    c, d, p = rng.normal(), 0.5 * rng.normal(), rng.uniform(0, np.pi)
    x = rng.uniform(-0.7, 0.7, (n, 2))
    t = rng.uniform(-1, 1, n)
    ca = np.cos(x @ k + c * t + p)
    eb = np.exp(x @ l + d * t)
    return x, FieldJet(c * ca, ca[:, None] * k), FieldJet(d * eb, eb[:, None] * l)


class TestTangentFields:
    def test_euclidean_X(self, chart_euclid_33):
        X = tangent_field_X(chart_euclid_33, [[0.2, 0.1], [-0.5, 0.3]])
        assert np.allclose(X, [[1, 0, 1], [1, 0, 1]], atol=1e-12)

    def test_euclidean_Xm(self, chart_euclid_33):
        Xm = tangent_fields_Xm(chart_euclid_33, [0.2, 0.1])
        # rows m: δ^{mn} ∂_t + ∂_m
        assert np.allclose(Xm, [[0, 1, 0], [1, 0, 1]], atol=1e-12)

    def test_product_X_is_vertical(self, chart_product_33, rng):
        X = tangent_field_X(chart_product_33, rng.uniform(-0.6, 0.6, (50, 2)))
        assert np.allclose(X, np.tile([1, 0, 1], (50, 1)), atol=1e-9)

    def test_tangency_warped(self, chart_warped_33, rng):
        x, P = curve_samples(chart_warped_33, 1000, rng)
        rx, rm = tangency_residual(chart_warped_33, x, P)
        assert rx < 1e-8 and rm < 1e-12

    def test_X_is_combination_of_Xm(self, chart_warped_33, rng):
        x, P = curve_samples(chart_warped_33, 200, rng)
        from fixangle.geometry import matrix_sqrt_inverse
        h = matrix_sqrt_inverse(chart_warped_33.metric_, x)
        coef = np.einsum("nk,nkm->nm", P, h)
        Xm = tangent_fields_Xm(chart_warped_33, x, P)
        X = tangent_field_X(chart_warped_33, x, P)
        assert np.max(np.abs(np.einsum("nm,nmc->nc", coef, Xm) - X)) < 1e-9


class TestQuadraticForms:
    @pytest.mark.parametrize("seed", range(5))
    def test_three_representations(self, chart_warped_33, seed):
        rng = np.random.default_rng(seed)
        x, a, b = analytic_pair(rng, 64)
        _, P = curve_samples(chart_warped_33, 64, rng)
        # unit covectors taken from the curves, placed at the test points
        inv_at, _ = metric_inverse_and_det(chart_warped_33.metric_, x)
        P = P / np.sqrt(np.einsum("njk,nj,nk->n", inv_at, P, P))[:, None]
        m = chart_warped_33.metric_
        r0 = xm_quadratic_form(chart_warped_33, x, a, b, P)
        r1 = representation_time_split(m, x, a, b, P)
        r2 = representation_characteristic(m, x, a, b, P)
        r3 = representation_projected(m, x, a, b, P)
        for r in (r1, r2, r3):
            assert np.max(np.abs(r - r0)) < 1e-9

    def test_apply_field(self):
        v = np.array([[2.0, 1.0, -1.0]])
        assert apply_field(v, np.array([3.0]), np.array([[1.0, 1.0]]))[0] == 6.0


class TestAmplitude:
    def test_euclidean_is_one(self, chart_euclid_33):
        assert np.array_equal(a_minus1_field(chart_euclid_33), np.ones(chart_euclid_33.grid_.shape))

    def test_product_closed_form(self, chart_product_33, product):
        # a_{-1} = |g|^{-1/4}; launch points have |g| = 1
        a = a_minus1_field(chart_product_33)
        p = chart_product_33.grid_.points()
        ex = np.linalg.det(product(p)) ** -0.25
        err = np.max(np.abs(a.ravel() - ex))
        assert err < 1e-3
        assert np.min(a) > 0

    def test_product_converges(self, product, chart_product_33):
        c65 = build_chart(product, 65)
        e = []
        for c in (chart_product_33, c65):
            p = c.grid_.points()
            e.append(np.max(np.abs(a_minus1_field(c).ravel() - np.linalg.det(product(p)) ** -0.25)))
        assert e[0] / e[1] > 3

    def test_simpson_vs_trapezoid(self, chart_warped_33):
        x = np.array([[0.1, 0.5], [-0.3, 0.2]])
        s = amplitude_a_minus1(chart_warped_33, x, rule="simpson")
        h = chart_warped_33.grid_.h
        t1 = amplitude_a_minus1(chart_warped_33, x, ds=h / 16, rule="trapezoid")
        t2 = amplitude_a_minus1(chart_warped_33, x, ds=h / 32, rule="trapezoid")
        # both rules agree far below the grid error of the Δ_g ω field itself
        assert np.max(np.abs(t1 - s)) < 1e-6 and np.max(np.abs(t2 - s)) < 1e-6
        assert np.max(np.abs(amplitude_a_minus1(chart_warped_33, x, ds=h / 128) - s)) < 1e-7

    def test_independent_of_q(self, chart_warped_33):
        w1 = compute_wavefront(chart_warped_33, Q)
        w2 = compute_wavefront(chart_warped_33, 3 * Q)
        assert np.array_equal(w1.a_minus1, w2.a_minus1)


class TestWavefront:
    def test_euclidean_quadrature_oracle(self, chart_euclid_33):
        u = wavefront_u(chart_euclid_33, Q, PTS)
        ref = [-0.5 * quad(lambda s: Q(np.array([[x, s]]))[0], -1, y, epsabs=1e-13)[0] for x, y in PTS]
        assert np.max(np.abs(u - ref)) < 1e-10

    def test_zero_q_euclidean(self, chart_euclid_33):
        wf = compute_wavefront(chart_euclid_33, zero_potential())
        assert not np.any(wf.u)

    def test_zero_q_product_nonzero(self, chart_product_33):
        wf = compute_wavefront(chart_product_33, zero_potential())
        assert np.max(np.abs(wf.u)) > 1e-2

    def test_identity_residual(self, chart_euclid_33):
        wf = compute_wavefront(chart_euclid_33, Q)
        r = transport_derivative_identity(wf, Q)[disk_mask(wf.grid)]
        assert r.max() < 1e-6

    def test_identity_refinement(self, chart_euclid_33):
        h = chart_euclid_33.grid_.h
        r = []
        for ds in (h / 32, h / 64):
            wf = compute_wavefront(chart_euclid_33, Q, ds=ds)
            r.append(transport_derivative_identity(wf, Q)[disk_mask(wf.grid)].max())
        assert r[0] / r[1] >= 4

    def test_identity_zero(self, chart_euclid_33):
        wf = compute_wavefront(chart_euclid_33, zero_potential())
        assert transport_derivative_identity(wf, zero_potential()).max() == 0.0

    def test_characteristic_on_surface(self, chart_warped_33):
        cc = characteristic_curve(chart_warped_33, [0.2, 0.4])
        inside = (cc.t > -0.9) & (cc.t < 0.4)
        w = chart_warped_33.omega(cc.x[inside])
        assert np.max(np.abs(w - cc.t[inside])) < 1e-6
        assert cc.x[0, 1] < -1


class TestHierarchy:
    def test_a0_is_u(self, chart_warped_33):
        wf = compute_wavefront(chart_warped_33, Q)
        a = solve_transport_hierarchy(chart_warped_33, Q, 0, wavefront=wf)
        assert np.array_equal(a[0], wf.u)

    def test_zero_q(self, chart_euclid_33):
        for a in solve_transport_hierarchy(chart_euclid_33, zero_potential(), 2):
            assert not np.any(a)

    def test_depth_cap(self, chart_euclid_33):
        with pytest.raises(ConfigError):
            solve_transport_hierarchy(chart_euclid_33, Q, 3)

    def test_a1_nested_quadrature(self, euclid, chart_euclid_33):
        q = lambda x, y: Q(np.array([[x, y]]))[0]
        e = 1e-3

        def a0(x, y):
            return -0.5 * quad(lambda s: q(x, s), -1, y, epsabs=1e-13)[0]

        def lap_a0(x, y):
            d11 = -0.5 * quad(lambda s: (q(x + e, s) - 2 * q(x, s) + q(x - e, s)) / e**2, -1, y, epsabs=1e-12)[0]
            return d11 - 0.5 * (q(x, y + e) - q(x, y - e)) / (2 * e)

        pts = PTS[:3]
        ref = np.array([-0.5 * quad(lambda s: -lap_a0(x, s) + q(x, s) * a0(x, s), -1, y,
                                    epsabs=1e-10, limit=200)[0] for x, y in pts])
        errs = []
        for c in (chart_euclid_33, build_chart(euclid, 65)):
            a1 = solve_transport_hierarchy(c, Q, 1)[1]
            errs.append(np.max(np.abs(bicubic(c.grid_, a1, pts) - ref)))
        assert errs[1] < 0.03 * np.max(np.abs(ref))
        assert errs[0] / errs[1] > 3
