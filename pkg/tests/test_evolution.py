"""Crank-Nicolson evolution: heat benchmark, steady states, conservation and linearization."""
import json

import numpy as np
import pytest

from shocklab.errors import ConfigError, CflViolation
from shocklab.evolution import (CFL, GridField, check_dt, evolution_mesh, evolve_linearized, evolve_nonlinear,
                                export_trajectory, gaussian, green_function_approx, heat_benchmark_error,
                                linearization_gap, stable_dt, steady_state)
from shocklab.profile import discrete_profile


@pytest.fixture(scope="module")
def mesh(burgers):
    return evolution_mesh(burgers, 25.0, 0.1, 5.0, auto_extend=False)


@pytest.fixture(scope="module")
def steady(burgers, mesh):
    return discrete_profile(burgers, mesh)


@pytest.fixture(scope="module")
def llf_steady(burgers, mesh):
    return steady_state(burgers, mesh, "llf")


class TestHeatBenchmark:
    def test_small_error(self):
        assert heat_benchmark_error(0.05, 0.005) < 5e-4

    def test_second_order(self):
        coarse = heat_benchmark_error(0.1, 0.01)
        fine = heat_benchmark_error(0.05, 0.005)
        assert coarse / fine > 3.0


class TestMesh:
    def test_fixed_mesh(self, mesh):
        assert mesh[0] == pytest.approx(-25.0)
        assert mesh[-1] == pytest.approx(25.0)
        np.testing.assert_allclose(np.diff(mesh), 0.1)
        assert np.min(np.abs(mesh)) == 0.0

    def test_extension_covers_outgoing_signals(self, psystem):
        x = evolution_mesh(psystem, 20.0, 0.2, 50.0)
        a_out = 2.3  # |a_1^-| is about 2.28
        assert x[0] < -(20.0 + a_out * 50.0)
        assert x[-1] > 20.0


class TestTimeStep:
    def test_stable_dt(self, burgers, steady):
        assert stable_dt(burgers, steady.values, 0.1) == pytest.approx(CFL * 0.1, rel=1e-6)

    def test_cfl_violation(self, burgers, steady):
        with pytest.raises(CflViolation):
            check_dt(burgers, steady.values, 0.1, 1.0)

    def test_unknown_flux(self, burgers, steady, mesh):
        with pytest.raises(ConfigError):
            evolve_nonlinear(burgers, steady, GridField(x=mesh, values=steady.values), 1.0, flux="upwind")


class TestNonlinear:
    def test_discrete_profile_is_steady(self, burgers, steady, mesh):
        traj = evolve_nonlinear(burgers, steady, GridField(x=mesh, values=steady.values), 5.0, dt=0.02,
                                flux="central", times=[5.0])
        assert np.max(np.abs(traj.fields[-1].values - steady.values)) < 1e-8

    def test_llf_steady_state_is_steady(self, burgers, llf_steady, mesh):
        assert llf_steady.residual < 1e-8
        traj = evolve_nonlinear(burgers, llf_steady, GridField(x=mesh, values=llf_steady.values), 5.0, dt=0.02,
                                times=[5.0])
        assert np.max(np.abs(traj.fields[-1].values - llf_steady.values)) < 1e-8

    def test_trapezoid_orbit_drifts_under_llf(self, burgers, steady, mesh):
        traj = evolve_nonlinear(burgers, steady, GridField(x=mesh, values=steady.values), 5.0, dt=0.02,
                                flux="llf", times=[5.0])
        assert np.max(np.abs(traj.fields[-1].values - steady.values)) > 1e-7

    def test_llf_steady_state_is_second_order(self, burgers):
        gaps = []
        for spacing in (0.1, 0.05):
            x = evolution_mesh(burgers, 25.0, spacing, 1.0, auto_extend=False)
            gaps.append(np.max(np.abs(steady_state(burgers, x, "llf").values - discrete_profile(burgers, x).values)))
        assert 0.0 < gaps[0] < 1e-2
        assert gaps[0] / gaps[1] > 3.0

    def test_llf_translate(self, llf_steady, mesh):
        moved = llf_steady.translate(0.05)
        assert moved.residual < 1e-8
        assert moved.delta == pytest.approx(0.05)
        np.testing.assert_allclose(moved.values, llf_steady.evaluate(mesh + 0.05), atol=1e-4)
        np.testing.assert_allclose(llf_steady.derivative[:, 0], -0.5 / np.cosh(mesh / 2) ** 2, atol=1e-2)

    def test_llf_perturbation_converges_under_refinement(self, burgers):
        # LLF and central perturbation fields agree to O(h^2)
        gaps = []
        for spacing in (0.1, 0.05):
            x = evolution_mesh(burgers, 25.0, spacing, 2.0, auto_extend=False)
            bump = 0.01 * gaussian(x, -3.0, 1.0)[:, None]
            fields = {}
            for flux in ("llf", "central"):
                base = steady_state(burgers, x, flux)
                traj = evolve_nonlinear(burgers, base, GridField(x=x, values=base.values + bump), 2.0,
                                        dt=0.2 * spacing, flux=flux, times=[2.0])
                fields[flux] = traj.fields[-1].values - base.values
            gaps.append(np.max(np.abs(fields["llf"] - fields["central"])))
        assert gaps[1] < 0.5 * gaps[0]

    @pytest.mark.parametrize("flux", ["central", "llf"])
    def test_mass_conserved(self, burgers, steady, mesh, flux):
        bump = 0.01 * gaussian(mesh, -3.0, 1.0)[:, None]
        traj = evolve_nonlinear(burgers, steady, GridField(x=mesh, values=steady.values + bump), 4.0,
                                flux=flux, times=[1.0, 2.0, 4.0])
        assert traj.mass[0, 0] == pytest.approx(0.01, rel=1e-6)
        assert np.max(np.abs(traj.mass - traj.mass[0])) < 1e-9

    def test_snapshots(self, burgers, steady, mesh):
        traj = evolve_nonlinear(burgers, steady, GridField(x=mesh, values=steady.values), 2.0, dt=0.02,
                                times=[0.5, 1.0, 2.0])
        np.testing.assert_allclose(traj.times, [0.0, 0.5, 1.0, 2.0])
        assert traj.at(0.9).t == pytest.approx(1.0)
        assert traj.perturbations().shape == (4, len(mesh), 1)


class TestLinearized:
    def test_gap_is_quadratic(self, burgers, steady):
        shape = gaussian(steady.x, -3.0, 1.0)[:, None]
        gaps = linearization_gap(burgers, steady, shape, [1e-2, 1e-3], 2.0, dt=0.02)
        ratio = gaps[1e-2] / gaps[1e-3]
        assert 50.0 < ratio < 200.0

    def test_linear_mass_conserved(self, burgers, steady, mesh):
        v0 = gaussian(mesh, -3.0, 1.0)[:, None]
        traj = evolve_linearized(burgers, steady, GridField(x=mesh, values=v0), 3.0, times=[1.0, 3.0])
        np.testing.assert_allclose(traj.mass[:, 0], 1.0, rtol=1e-8)

    def test_green_source_too_narrow(self, burgers, steady):
        with pytest.raises(ConfigError):
            green_function_approx(burgers, steady, -3.0, 0.1, 1.0)

    def test_green_function_has_unit_mass(self, burgers, steady):
        green = green_function_approx(burgers, steady, -3.0, 0.5, 1.0, times=[1.0])
        np.testing.assert_allclose(green.mass[:, 0], 1.0, rtol=1e-6)


class TestExport:
    def test_export(self, burgers, steady, mesh, tmp_path):
        traj = evolve_nonlinear(burgers, steady, GridField(x=mesh, values=steady.values), 1.0, dt=0.02, times=[1.0])
        paths = export_trajectory(traj, str(tmp_path), "snap")
        assert len(paths) == 3
        meta = json.loads((tmp_path / "snap.json").read_text())
        assert meta["times"] == [0.0, 1.0]
        assert meta["mesh"]["points"] == len(mesh)
        assert meta["files"] == ["snap_000.csv", "snap_001.csv"]
