import numpy as np
import pytest

from fixangle.errors import CausticError, ConfigError, IntegratorError
from fixangle.eikonal import (
    SemigeodesicChart,
    build_chart,
    eikonal_increment_defect,
    eikonal_residual,
    induced_offdiagonal,
    shoot_geodesic,
    verify_no_caustics,
)
from fixangle.geometry import make_metric


class TestShooting:
    def test_euclidean_straight(self, euclid):
        c = shoot_geodesic(euclid, [0.3, -1.0], [0.0, 1.0], ds=1e-2, s_max=1.0)
        assert np.allclose(c.x[:, 0], 0.3, atol=1e-15)
        assert np.allclose(c.x[:, 1], -1.0 + c.s, atol=1e-12)
        assert np.array_equal(c.v, np.tile([0.0, 1.0], (len(c.s), 1)))

    def test_product_keeps_launch_coordinate(self, product):
        # Γ^i_nn = 0, so the vertical line is a geodesic
        for y in (-0.4, 0.05, 0.6):
            c = shoot_geodesic(product, [y, -1.3], [0.0, 1.0], ds=1e-3, s_max=2.6)
            assert np.max(np.abs(c.x[:, 0] - y)) < 1e-12

    def test_richardson_order_four(self, warped):
        # halving ds must shrink the half-step difference by at least 2^4 (up to noise)
        x0, v0 = [0.3, -1.2], [0.0, 1.0]
        ends = [shoot_geodesic(warped, x0, v0, ds=ds, s_max=2.4, margin=5.0).x[-1]
                for ds in (0.008, 0.004, 0.002)]
        ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
        assert ratio > 12

    def test_exit_record(self, warped):
        c = shoot_geodesic(warped, [0.2, -1.25], [0.0, 1.0])
        assert np.linalg.norm(c.exit_point) == pytest.approx(1.0)
        assert np.allclose(c.exit_direction, [0.0, 1.0], atol=1e-6)

    def test_unit_speed_required(self, euclid):
        with pytest.raises(ConfigError):
            shoot_geodesic(euclid, [0, -1], [0, 2.0])

    def test_drift_is_reported(self):
        # large steps through a strong bump break the speed constraint
        m = make_metric("conformal", amplitude=5.0, radius=0.3)
        with pytest.raises(IntegratorError):
            shoot_geodesic(m, [0.05, -1.2], [0.0, 1.0], ds=0.2)


class TestChart:
    def test_euclidean_exact(self, chart_euclid_33):
        c = chart_euclid_33
        X2 = c.grid_.points()[:, 1].reshape(c.grid_.shape)
        assert np.max(np.abs(c.omega_ - X2)) < 1e-12
        assert np.allclose(c.det_, 1.0, atol=1e-12)
        cert = verify_no_caustics(c)
        assert cert.passed and cert.exit_deviation == 0.0
        assert cert.min_jacobian == pytest.approx(1.0)

    def test_symmetric_product_eikonal_is_coordinate(self):
        m = make_metric("symmetric_product", amplitude=0.1, radius=0.8)
        c = build_chart(m, 17)
        X2 = c.grid_.points()[:, 1].reshape(c.grid_.shape)
        assert np.max(np.abs(c.omega_ - X2)) < 1e-9
        assert np.max(np.abs(c.domega_ - [0.0, 1.0])) < 1e-9

    def test_roundtrip(self, chart_warped_33, rng):
        c = chart_warped_33
        y = np.stack([rng.uniform(-1, 1, 500), rng.uniform(-1.1, 1.1, 500)], 1)
        assert np.max(np.abs(c.transform(c.inverse_transform(y)) - y)) < 1e-6

    def test_flat_outside(self, chart_warped_33):
        cert = chart_warped_33.certificate_
        assert cert.flatness_value < 1e-6
        assert cert.flatness_gradient < 1e-6
        assert cert.passed

    def test_product_residual_zero(self, chart_product_33):
        assert eikonal_residual(chart_product_33).max < 1e-10

    def test_euclidean_residual_zero(self, chart_euclid_33):
        assert eikonal_residual(chart_euclid_33).max < 1e-12

    def test_momentum_residual(self, chart_warped_33):
        # the momentum covector is exact on the curves; only interpolation error remains
        mom = eikonal_residual(chart_warped_33, source="momentum").max
        assert mom < 0.2 * eikonal_residual(chart_warped_33).max

    def test_gauss_lemma_and_increment(self, chart_warped_33):
        assert induced_offdiagonal(chart_warped_33) < 1e-6
        assert eikonal_increment_defect(chart_warped_33, curves=9) < 1e-6

    def test_outside_domain(self, chart_euclid_33):
        with pytest.raises(ConfigError):
            chart_euclid_33.transform([0.0, 5.0])

    def test_rejects_non_metric(self):
        with pytest.raises(ConfigError):
            SemigeodesicChart(17).fit("euclidean")


class TestCaustics:
    def test_strong_lens_fails(self):
        m = make_metric("conformal", amplitude=5.0, radius=0.5)
        with pytest.raises(CausticError) as ei:
            SemigeodesicChart(17).fit(m)
        assert ei.value.jacobian < 0.1

    def test_sign_change_oracle(self):
        # independent shots at neighbouring launches cross: the Jacobian changes sign
        m = make_metric("conformal", amplitude=5.0, radius=0.5)
        with pytest.raises(CausticError) as ei:
            SemigeodesicChart(17).fit(m)
        y0, d = ei.value.launch, 1e-4
        a = shoot_geodesic(m, [y0 - d, -1.25], [0, 1], s_max=3.0, margin=10)
        b = shoot_geodesic(m, [y0 + d, -1.25], [0, 1], s_max=3.0, margin=10)
        J = (b.x - a.x) / (2 * d)
        V = 0.5 * (a.v + b.v)
        det = J[:, 0] * V[:, 1] - J[:, 1] * V[:, 0]
        assert det[0] == pytest.approx(1.0)
        assert det.min() < 0
