import numpy as np
import pytest

from fixangle.errors import CertificateError, ConfigError
from fixangle.geometry import gaussian_potential, make_metric, zero_potential
from fixangle.inversion import (
    PotentialRecovery,
    RayTransform,
    build_exit_map,
    check_symmetric_inputs,
    exit_constancy,
    ray_agreement,
    ray_transform_from_wavefront,
    ray_transform_quadrature,
    recover_q_from_wavefront,
    reflect_field,
    single_measurement_symmetric,
    solver_noise_floor,
    two_measurement_experiment,
)
from fixangle.transport import compute_wavefront
from fixangle.wavesolver import boundary_points, solve_cauchy

Q = gaussian_potential(1.0, (0.1, 0.05), 0.3)
QS = gaussian_potential(1.0, (0.1, 0.0), 0.3)  # even in x_n


def q_grid(chart, q):
    return q(chart.grid_.points()).reshape(chart.grid_.shape)


class TestTransportRecovery:
    def test_euclidean_exact(self, chart_euclid_33):
        r = recover_q_from_wavefront(compute_wavefront(chart_euclid_33, Q), chart_euclid_33)
        assert r.coverage == 1.0
        assert r.relative_error(Q) < 1e-8

    @pytest.mark.parametrize("name", ["chart_product_33", "chart_warped_33"])
    def test_curved(self, name, request):
        c = request.getfixturevalue(name)
        r = recover_q_from_wavefront(compute_wavefront(c, Q), c)
        assert r.relative_error(Q) < 2e-3
        assert r.relative_error(q_grid(c, Q)) == pytest.approx(r.relative_error(Q))

    def test_rejects_other_data(self, chart_euclid_33):
        with pytest.raises(ConfigError):
            recover_q_from_wavefront(np.zeros(3), chart_euclid_33)


class TestEstimator:
    def test_fit_predict_score(self, chart_euclid_33, rng):
        est = PotentialRecovery(chart_euclid_33).fit(compute_wavefront(chart_euclid_33, Q))
        x = rng.uniform(-0.6, 0.6, (40, 2))
        assert np.max(np.abs(est.predict(x) - Q(x))) < 1e-3
        assert est.predict([[1.2, 0.0]])[0] == 0.0
        assert -1e-8 < est.score(Q) <= 0.0
        assert est.coverage_ == 1.0

    def test_needs_chart(self, chart_euclid_33):
        with pytest.raises(ConfigError):
            PotentialRecovery().fit(compute_wavefront(chart_euclid_33, Q))

    def test_params(self):
        assert PotentialRecovery().get_params() == {"chart": None}


class TestExitMap:
    @pytest.mark.parametrize("name", ["chart_euclid_33", "chart_warped_33"])
    def test_on_sphere(self, name, request):
        c = request.getfixturevalue(name)
        em = build_exit_map(c)
        r = em.residuals()
        assert r["sphere"] < 1e-12 and r["time_equals_xn"] < 1e-10
        assert np.all(em.s[em.mask] >= -1e-12)

    def test_euclidean_closed_form(self, chart_euclid_33):
        em = build_exit_map(chart_euclid_33)
        p = chart_euclid_33.grid_.points().reshape(em.exit_points.shape)
        # the poles x1 = ±1 are tangential crossings, resolved only to bisection accuracy
        m = em.mask & (np.abs(p[..., 0]) < 1 - 1e-9)
        assert np.allclose(em.exit_points[m][:, 0], p[m][:, 0], atol=1e-12)
        assert np.allclose(em.exit_points[m][:, 1], np.sqrt(1 - p[m][:, 0] ** 2), atol=1e-10)

    def test_constant_along_characteristic(self, chart_warped_33):
        assert exit_constancy(chart_warped_33, [0.2, -0.3]) < 1e-9

    def test_table(self, chart_euclid_33):
        t = build_exit_map(chart_euclid_33).to_table()
        assert len({len(v) for v in t.values()}) == 1


class TestRayTransform:
    def test_euclidean_quadrature_oracle(self, euclid):
        # straight vertical lines; adaptive quadrature as the oracle
        from scipy.integrate import quad
        launch = np.linspace(-0.5, 0.5, 11)
        rq = ray_transform_quadrature(euclid, Q, launch)
        ref = [quad(lambda s: Q(np.array([[y, s]]))[0], -1, 1, epsabs=1e-13, limit=200)[0] for y in launch]
        assert np.max(np.abs(rq.values - ref)) < 1e-10

    @pytest.mark.parametrize("name", ["chart_euclid_33", "chart_product_33", "chart_warped_33"])
    def test_transport_vs_quadrature(self, name, request):
        c = request.getfixturevalue(name)
        rt = ray_transform_from_wavefront(compute_wavefront(c, Q), compute_wavefront(c, zero_potential()), c)
        agr = ray_agreement(rt, ray_transform_quadrature(c.metric_, Q))
        assert agr.fraction_within == 1.0 and agr.coverage == 1.0

    def test_agreement_masks(self):
        ref = RayTransform(np.zeros(3), np.array([1.0, 2.0, 4.0]))
        est = RayTransform(np.zeros(3), np.array([1.01, 2.5, 4.0]), mask=np.array([True, True, False]))
        a = ray_agreement(est, ref)
        assert a.coverage == pytest.approx(2 / 3)
        assert a.fraction_within == 0.5
        assert a.rel_errors[0] == pytest.approx(0.01)


class TestSymmetry:
    def test_check_inputs(self):
        m = make_metric("symmetric_product", amplitude=0.1, radius=0.8)
        assert check_symmetric_inputs(m, QS)["q1"] < 1e-12
        with pytest.raises(CertificateError):
            check_symmetric_inputs(m, Q)
        with pytest.raises(CertificateError):
            check_symmetric_inputs(make_metric("warped_product", amplitude=0.05), QS)

    def test_verify_path(self):
        m = make_metric("symmetric_product", amplitude=0.1, radius=0.8)
        rep = single_measurement_symmetric(m, QS, resolution=33, verify=True)
        v = rep.extra["verification"]
        assert v["defect"] < 1e-10 < v["discretization_estimate"] < 1.0
        assert v["two_measurement_errors"]["combined"] == pytest.approx(rep.errors["combined"], rel=1e-6)

    def test_reflect_field_matches_direct(self, euclid):
        th, pts = boundary_points(32)
        up = solve_cauchy(euclid, QS, 1, resolution=17, trace_points=pts)
        down = solve_cauchy(euclid, QS, -1, resolution=17, trace_points=pts)
        r = reflect_field(up, th)
        assert r.direction == -1 and r.meta["synthesized"]
        # the box grid is symmetric, so reflection reproduces the direct solve
        assert np.max(np.abs(r.trace_values - down.trace_values)) < 1e-10 * np.max(np.abs(down.trace_values))
        assert np.array_equal(reflect_field(r, th).trace_values, up.trace_values)


@pytest.fixture(scope="module")
def report(euclid, chart_euclid_33):
    return two_measurement_experiment(euclid, Q, resolution=33, chart=chart_euclid_33)


class TestExperiment:
    def test_positive_ratio(self, report):
        assert report.lhs > 0 and report.rhs > 0 and np.isfinite(report.ratio)
        assert set(report.rhs_terms) == {"front_curve_u", "sigma_u", "sigma_v"}
        d = report.to_dict()
        assert d["coverage"] == 1.0 and not d["degenerate_ratio"]

    def test_twins_average(self, report):
        # the combined estimate is at least as good as the worse twin
        e = report.errors
        assert e["combined"] <= max(e["twin_u"], e["twin_v"])

    def test_equal_potentials_degenerate(self, euclid, chart_euclid_33):
        rep = two_measurement_experiment(euclid, Q, Q, resolution=33, chart=chart_euclid_33)
        assert rep.degenerate and np.isnan(rep.ratio)
        assert rep.errors["max_abs"] == 0.0
        assert rep.to_dict()["ratio"] is None

    def test_noise_floor_scale(self, report):
        assert 0 < report.noise_floor < 1e-10
        f = solve_cauchy(make_metric("euclidean"), zero_potential(), 1, resolution=17,
                         trace_points=boundary_points(8)[1])
        g = f.grid
        scale = np.max(np.abs(f.trace_values))
        assert solver_noise_floor(f) == pytest.approx(np.finfo(float).eps * scale * np.sqrt(g.n_steps) / g.h)
