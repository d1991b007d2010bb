"""Viscous profiles: the Burgers closed form, residuals, shifts and the discrete steady state."""
import numpy as np
import pytest

from shocklab.errors import ShiftOutOfRange
from shocklab.evolution import evolution_mesh
from shocklab.profile import (connection_mass, discrete_profile, fit_decay_rate, frozen_coefficient_ratio,
                              ode_residual, uniform_mesh)


class TestBurgersProfile:
    def test_matches_tanh(self, burgers_profile):
        exact = -np.tanh(burgers_profile.x / 2)
        np.testing.assert_allclose(burgers_profile.values[:, 0], exact, atol=1e-7)

    def test_derivative(self, burgers_profile):
        exact = -0.5 / np.cosh(burgers_profile.x / 2) ** 2
        np.testing.assert_allclose(burgers_profile.derivative[:, 0], exact, atol=1e-7)

    def test_decay_rate(self, burgers_profile):
        assert abs(burgers_profile.decay_rate - 1.0) < 0.02

    def test_centered(self, burgers_profile):
        assert abs(burgers_profile.evaluate(0.0)[0]) < 1e-8

    def test_connection_mass(self, burgers_profile):
        np.testing.assert_allclose(connection_mass(burgers_profile), [-2.0], atol=1e-6)


class TestPSystemProfile:
    def test_residual(self, psystem, psystem_profile):
        assert psystem_profile.residual <= 1e-8
        assert ode_residual(psystem, psystem_profile.x, psystem_profile.values) <= 1e-8

    def test_endstates(self, psystem, psystem_profile):
        np.testing.assert_allclose(psystem_profile.values[0], psystem.u_minus, atol=1e-8)
        np.testing.assert_allclose(psystem_profile.values[-1], psystem.u_plus, atol=1e-8)

    def test_decay_positive(self, psystem_profile):
        assert psystem_profile.decay_rate > 0
        assert fit_decay_rate(psystem_profile) == pytest.approx(psystem_profile.decay_rate)

    def test_frozen_coefficients_bounded(self, psystem, psystem_profile):
        ratio = frozen_coefficient_ratio(psystem, psystem_profile, 0.5 * psystem_profile.decay_rate)
        assert np.isfinite(ratio)


class TestShift:
    def test_shift_matches_evaluate(self, burgers_profile):
        shifted = burgers_profile.shifted(0.25)
        np.testing.assert_allclose(shifted[:, 0], -np.tanh((burgers_profile.x + 0.25) / 2), atol=1e-7)

    def test_zero_shift_is_copy(self, burgers_profile):
        out = burgers_profile.shifted(0.0)
        np.testing.assert_array_equal(out, burgers_profile.values)
        assert out is not burgers_profile.values

    def test_out_of_range(self, burgers_profile):
        with pytest.raises(ShiftOutOfRange):
            burgers_profile.shifted(4.0)

    def test_evaluate_outside_mesh(self, burgers_profile):
        np.testing.assert_allclose(burgers_profile.evaluate(np.array([-100.0, 100.0]))[:, 0], [1.0, -1.0])
        np.testing.assert_array_equal(burgers_profile.slope(np.array([-100.0, 100.0])), 0.0)

    def test_export(self, burgers_profile, tmp_path):
        path = tmp_path / "profile.csv"
        burgers_profile.export_csv(str(path))
        header = path.read_text().splitlines()[0]
        assert header == "x,u1,du1"


class TestDiscreteProfile:
    @pytest.fixture(scope="class")
    def mesh(self, burgers):
        return evolution_mesh(burgers, 25.0, 0.1, 1.0, auto_extend=False)

    def test_close_to_continuous(self, burgers, mesh):
        disc = discrete_profile(burgers, mesh)
        # second-order in h
        assert np.max(np.abs(disc.values[:, 0] + np.tanh(mesh / 2))) < 1e-2

    def test_translate(self, burgers, mesh):
        disc = discrete_profile(burgers, mesh)
        moved = disc.translate(0.05)
        np.testing.assert_allclose(moved.values, disc.evaluate(mesh + 0.05), atol=1e-5)
        assert moved.delta == pytest.approx(0.05)

    def test_trapezoid_orbit(self, burgers, mesh):
        disc = discrete_profile(burgers, mesh)
        u = disc.values
        h = mesh[1] - mesh[0]
        lhs = (u[1:] - u[:-1]) / h
        rhs = 0.5 * (burgers.profile_rhs(u[:-1]) + burgers.profile_rhs(u[1:]))
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_nonuniform_mesh(self, burgers):
        with pytest.raises(ValueError):
            discrete_profile(burgers, np.array([0.0, 0.1, 0.3, 0.4]))

    def test_uniform_mesh(self):
        x = uniform_mesh(10.0, 201)
        assert x[0] == -10.0 and x[-1] == 10.0 and len(x) == 201
