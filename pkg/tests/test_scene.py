import numpy as np
import pytest

from conftest import cone_target
from oamradcom.scene import (SceneError, ScattererState, TargetState, azimuth_rate,
                             doppler_gain, geometric_rotational_doppler, linear_doppler,
                             rotation_matrix, rotational_doppler, scatterer_position)


class TestRotationMatrix:
    def test_zero_angles(self):
        np.testing.assert_allclose(rotation_matrix(0.0, 0.0), np.eye(3), atol=1e-15)

    def test_quarter_elevation(self):
        m = rotation_matrix(np.pi / 2, 0.0)
        np.testing.assert_allclose(m[1], [0, 0, -1], atol=1e-15)
        np.testing.assert_allclose(m[2], [0, 1, 0], atol=1e-15)

    def test_orthonormal_and_proper(self, rng):
        for theta, phi in zip(rng.uniform(0, np.pi, 1000), rng.uniform(0, 2 * np.pi, 1000)):
            m = rotation_matrix(theta, phi)
            assert np.allclose(m.T @ m, np.eye(3), atol=1e-12)
            assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12)


class TestStates:
    def test_centroid_needs_zero_radius(self):
        with pytest.raises(SceneError):
            ScattererState(0.5, 0.0, 1.0, "centroid")
        with pytest.raises(SceneError):
            ScattererState(0.0, 0.0, 1.0, "vertex")

    def test_target_needs_centroid_and_vertex(self):
        body = ScattererState(0.6, 0.0, 1.0, "body")
        with pytest.raises(SceneError):
            TargetState(100.0, 0.5, 0.5, scatterers=(body,))
        with pytest.raises(SceneError):
            TargetState(100.0, 0.5, 0.5, scatterers=())

    @pytest.mark.parametrize("kw", [{"r": -1.0}, {"omega": -1.0}])
    def test_invalid_target(self, kw):
        with pytest.raises(SceneError):
            cone_target(**kw)


class TestPositions:
    def test_static_centroid(self):
        tg = cone_target()
        r, th, ph = scatterer_position(tg, tg.centroid, np.linspace(0, 1, 5))
        np.testing.assert_allclose(r, 82.5)
        np.testing.assert_allclose(th, np.deg2rad(20.0))
        np.testing.assert_allclose(ph, np.deg2rad(70.0))

    def test_centroid_ignores_spin(self):
        a, b = cone_target(omega=1.0, phase=0.0), cone_target(omega=30.0, phase=2.0)
        t = np.linspace(0, 1, 7)
        np.testing.assert_allclose(scatterer_position(a, a.centroid, t),
                                   scatterer_position(b, b.centroid, t))

    def test_no_spin_is_static(self):
        tg = cone_target(omega=0.0)
        pos = np.array(scatterer_position(tg, tg.vertex, np.linspace(0, 3, 9)))
        assert np.ptp(pos, axis=1) == pytest.approx([0, 0, 0], abs=1e-12)

    def test_periodic(self):
        tg = cone_target()
        period = 2 * np.pi / tg.spin_rate
        from oamradcom.scene import scatterer_cartesian
        for t in (0.0, 0.137, 0.9):
            np.testing.assert_allclose(scatterer_cartesian(tg, tg.vertex, t + period),
                                       scatterer_cartesian(tg, tg.vertex, t), atol=1e-10)

    def test_translation(self):
        tg = cone_target(speed=10.0, direction=0.0)
        r, _, _ = scatterer_position(tg, tg.centroid, np.array([0.0, 1.0]))
        assert r[1] - r[0] == pytest.approx(10.0)

    def test_negative_time(self):
        tg = cone_target()
        with pytest.raises(SceneError):
            scatterer_position(tg, tg.vertex, -1.0)


class TestDoppler:
    def test_mode_zero(self):
        tg = cone_target()
        assert np.all(rotational_doppler(tg, tg.vertex, 0, np.linspace(0, 1, 11)) == 0)

    def test_no_spin(self):
        tg = cone_target(omega=0.0)
        assert np.all(rotational_doppler(tg, tg.vertex, 3, np.linspace(0, 1, 11)) == 0)

    def test_linear_in_mode(self):
        tg = cone_target()
        t = np.linspace(0.01, 1, 37)
        a = rotational_doppler(tg, tg.vertex, -1, t)
        b = rotational_doppler(tg, tg.vertex, 2, t)
        np.testing.assert_allclose(a, -0.5 * b)

    def test_zero_mean_over_period(self):
        tg = cone_target()
        t = np.arange(4096) / 4096 * 2 * np.pi / tg.spin_rate
        f = rotational_doppler(tg, tg.vertex, 5, t)
        assert abs(np.mean(f)) <= 1e-9 * np.max(np.abs(f))

    def test_singular_at_zenith(self):
        tg = cone_target(theta_deg=0.0)
        with pytest.raises(SceneError):
            doppler_gain(tg, tg.vertex)

    def test_kinematic_rate_matches_finite_difference(self):
        tg = cone_target(theta_deg=75.0, phi_deg=25.0, speed=3.0, direction=0.4)
        t, dt = np.linspace(0, 0.5, 23), 1e-6
        fd = (scatterer_position(tg, tg.vertex, t + dt)[2] - scatterer_position(tg, tg.vertex, t)[2]) / dt
        np.testing.assert_allclose(azimuth_rate(tg, tg.vertex, t), fd, rtol=1e-3, atol=1e-6)

    @pytest.mark.xfail(strict=True, reason="closed-form swing amplitude does not follow the "
                                          "cone kinematics; see notes")
    def test_closed_form_matches_kinematics(self):
        tg = cone_target(theta_deg=80.0, phi_deg=20.0)
        t = np.linspace(0, 0.2, 41)
        closed = rotational_doppler(tg, tg.vertex, 1, t)
        geom = geometric_rotational_doppler(tg, tg.vertex, 1, t)
        np.testing.assert_allclose(closed, geom, rtol=0.01, atol=0.01 * np.max(np.abs(geom)))

    def test_linear_doppler(self):
        assert linear_doppler(cone_target(), 209.0) == 0.0
        assert linear_doppler(cone_target(speed=5.0, direction=np.pi / 2), 209.0) == \
            pytest.approx(0.0, abs=1e-12)
        assert linear_doppler(cone_target(speed=10.0), 209.0) == pytest.approx(332.6, abs=0.05)
        with pytest.raises(SceneError):
            linear_doppler(cone_target(), 0.0)
