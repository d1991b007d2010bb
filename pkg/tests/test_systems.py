"""Model catalog: Rankine-Hugoniot, characteristic data and shock classification."""
import numpy as np
import pytest

from shocklab.errors import NoAdmissibleShock
from shocklab.systems import (Mode, classify_shock, endstate_data, is_strictly_parabolic, jacobian_error,
                              make_burgers, make_heat, make_psystem, outgoing_modes)


class TestBurgers:
    def test_endstates_and_speed(self, burgers):
        np.testing.assert_allclose(burgers.u_minus, [1.0])
        np.testing.assert_allclose(burgers.u_plus, [-1.0])
        assert burgers.shock_speed == 0.0
        assert burgers.rankine_hugoniot_residual() == 0.0

    def test_lax_with_no_outgoing_modes(self, burgers):
        dm, dp = endstate_data(burgers, "-"), endstate_data(burgers, "+")
        assert classify_shock(dm, dp) == ("lax", 1)
        assert outgoing_modes(dm, dp) == []

    def test_characteristic_data(self, burgers):
        dm = endstate_data(burgers, "-")
        np.testing.assert_allclose(dm.speeds, [1.0])
        np.testing.assert_allclose(dm.beta, [1.0])
        np.testing.assert_allclose(dm.gamma, [1.0])


class TestPSystem:
    def test_rankine_hugoniot(self, psystem):
        assert psystem.rankine_hugoniot_residual() < 1e-12

    def test_shock_speed(self, psystem):
        # s^2 = -(p(2) - p(1)) / (2 - 1) with p(v) = v^-2
        assert abs(abs(psystem.shock_speed) - np.sqrt(0.75)) < 1e-12

    def test_lax_classification(self, psystem):
        dm, dp = endstate_data(psystem, "-"), endstate_data(psystem, "+")
        kind, excess = classify_shock(dm, dp)
        assert (kind, excess) == ("lax", 1)
        assert len(outgoing_modes(dm, dp)) == 1

    def test_eigenvectors_are_biorthogonal(self, psystem):
        for side in "-+":
            d = endstate_data(psystem, side)
            np.testing.assert_allclose(d.left @ d.right.T, np.eye(2), atol=1e-12)
            A = psystem.frame_jacobian(d.state)
            for j in range(2):
                np.testing.assert_allclose(A @ d.right[j], d.speeds[j] * d.right[j], atol=1e-12)

    def test_speeds_sorted(self, psystem):
        for side in "-+":
            assert np.all(np.diff(endstate_data(psystem, side).speeds) > 0)

    def test_jacobian_matches_flux(self, psystem, rng):
        states = np.column_stack([rng.uniform(0.5, 3.0, 10), rng.uniform(-1.0, 1.0, 10)])
        assert jacobian_error(psystem, states) < 1e-6

    def test_parabolic(self, psystem):
        assert is_strictly_parabolic(psystem)

    @pytest.mark.parametrize("v_minus, v_plus", [(1.0, 1.0), (-1.0, 2.0), (1.0, 0.0)])
    def test_no_admissible_shock(self, v_minus, v_plus):
        with pytest.raises(NoAdmissibleShock):
            make_psystem(2.0, v_minus, v_plus)


class TestMisc:
    def test_heat_model_has_zero_flux(self):
        model = make_heat(2)
        u = np.ones((5, 2))
        np.testing.assert_array_equal(model.flux(u), 0.0)
        assert model.viscosity(u).shape == (5, 2, 2)

    def test_bad_side(self):
        with pytest.raises(ValueError):
            endstate_data(make_burgers(), "0")

    def test_mode_is_hashable(self):
        assert {Mode("-", 0): 1.0}[Mode("-", 0)] == 1.0
