"""Certificate grids, adaptive quadrature, the interaction identity and certificate ids."""
import json

import numpy as np
import pytest
from scipy.integrate import trapezoid

from shocklab.diffusion_waves import DiffusionWave
from shocklab.errors import ConfigError, QuadratureNonconvergent
from shocklab.kernel_quadrature import (CERTIFICATE_IDS, QuadratureSettings, _capped, adaptive,
                                        certify_lemma33, characteristic_points, evaluation_grid, heat_kernel,
                                        initial_data_template, interaction_identity_sides, middle_time_integral,
                                        refined_times, region_coverage, split_time_nodes)
from shocklab.pipeline import expand_ids
from shocklab.schema import is_valid_certificate

CHEAP = QuadratureSettings(panels=2, order=8, rel_tol=0.05, max_levels=6)


class TestGrids:
    def test_refined_times_geometric(self):
        np.testing.assert_allclose(refined_times([1.0, 4.0, 16.0]), [1.0, 2.0, 4.0, 8.0, 16.0])

    def test_refined_times_next_to_zero(self):
        np.testing.assert_allclose(refined_times([0.0, 1.0]), [0.0, 0.5, 1.0])

    def test_capped(self):
        assert _capped((0.1, 1.0, 4.0, 100.0), 4.0) == (0.1, 1.0, 4.0)
        with pytest.raises(ConfigError):
            _capped((4.0, 16.0), 1.0)

    def test_points_include_rays(self, psystem_ctx):
        t = 10.0
        pts = characteristic_points(psystem_ctx, t)
        for a in psystem_ctx.all_speeds:
            assert np.min(np.abs(pts - a * t)) < 1e-12
        assert 0.0 in pts
        assert len(characteristic_points(psystem_ctx, t, refine=True)) > len(pts)

    def test_single_time_grid(self, psystem_ctx):
        grid = evaluation_grid(psystem_ctx, [1.0, 4.0], x_dependent=False)
        assert grid == [(0.0, 1.0), (0.0, 4.0)]

    def test_coverage(self, psystem_ctx):
        grid = evaluation_grid(psystem_ctx, [1.0, 10.0])
        cov = region_coverage(psystem_ctx, grid, time_integral=True)
        assert cov == {"outside": True, "inside": True, "wedge": True, "s_split": True}


class TestQuadrature:
    def test_adaptive_accepts_converged_values(self):
        assert adaptive(lambda p: np.array([3.0, 4.0]), CHEAP) == pytest.approx(5.0)

    def test_adaptive_gives_up(self):
        with pytest.raises(QuadratureNonconvergent):
            adaptive(lambda p: np.array([float(p)]), CHEAP)

    def test_split_time_nodes_handle_endpoint_singularities(self):
        t = 9.0
        s, w = split_time_nodes(t, 4, 8)
        assert np.all((s > 0) & (s < t))
        assert np.sum(w) == pytest.approx(t, rel=1e-12)
        assert np.sum(w * s**-0.5) == pytest.approx(2 * np.sqrt(t), rel=1e-10)
        assert np.sum(w * (t - s) ** -0.5) == pytest.approx(2 * np.sqrt(t), rel=1e-10)


class TestHeatKernel:
    def test_unit_mass(self):
        x = np.linspace(-40, 40, 8001)
        g, _ = heat_kernel(x, 3.0, 1.5, 0.8)
        assert trapezoid(g, x) == pytest.approx(1.0, rel=1e-10)

    def test_tau_derivative(self):
        x, h = np.linspace(-5, 5, 21), 1e-5
        _, g_tau = heat_kernel(x, 2.0, 0.0, 1.3)
        fd = (heat_kernel(x, 2.0 + h, 0.0, 1.3)[0] - heat_kernel(x, 2.0 - h, 0.0, 1.3)[0]) / (2 * h)
        np.testing.assert_allclose(g_tau, fd, atol=1e-9)


class TestInteractionIdentity:
    def test_identity_holds(self, psystem_ctx):
        k, j = 0, 1
        a_k, a_j = psystem_ctx.speeds_minus[k], psystem_ctx.speeds_minus[j]
        beta_j = psystem_ctx.beta_minus[j]
        wave = DiffusionWave(mass=0.01, speed=0.0, beta=psystem_ctx.beta_minus[k], gamma=0.5)
        t, s = 10.0, 4.0
        xi = a_j * (t - s) + a_k * s
        for x in (xi + 1.0, xi - 0.5, xi + 3.0):
            lhs, rhs, scale = interaction_identity_sides(wave, a_j, a_k, beta_j, x, t, s, xi)
            assert scale > 0
            assert abs(lhs - rhs) / scale < 1e-6

    def test_middle_time_window_empty(self):
        wave = DiffusionWave(mass=0.01, speed=0.0, beta=1.0, gamma=0.5)
        assert middle_time_integral(wave, 0.5, -2.0, 1.0, 0.0, 4.0, 4, 8) == 0.0

    def test_middle_time_positive(self):
        wave = DiffusionWave(mass=0.01, speed=0.0, beta=1.0, gamma=0.5)
        value = middle_time_integral(wave, 0.5, -2.0, 1.0, 0.0, 25.0, 4, 8)
        assert np.isfinite(value) and value > 0


class TestCertificateIds:
    def test_default_groups(self):
        assert len(expand_ids(CERTIFICATE_IDS)) == 9

    def test_single_grouped_id(self):
        assert expand_ids(["3.19"]) == [["3.19"]]

    def test_sorted_and_merged(self):
        assert expand_ids(["3.21", "3.14", "3.19"]) == [["3.14"], ["3.19", "3.21"]]

    def test_range_expands(self):
        assert expand_ids(["3.19-3.24"]) == [["3.19", "3.20", "3.21", "3.22", "3.23", "3.24"]]

    def test_unknown_id(self):
        with pytest.raises(ConfigError):
            expand_ids(["9.9"])


class TestHyperbolicCertificate:
    def test_short_horizon(self, psystem_ctx, tmp_path):
        initial = initial_data_template(psystem_ctx, 0.01, np.array([1.0, 0.0]))
        cert = certify_lemma33(psystem_ctx, initial, CHEAP, t_max=1.0)
        result = cert.estimate("3.17")
        assert np.isfinite(result.sup_ratio)
        assert result.diagnostics["crude_inequality_holds"]
        assert set(result.rows[:, 1]) == {0.0, 1.0}
        doc = cert.to_dict()
        assert is_valid_certificate(json.loads(json.dumps(doc)))
        paths = cert.export(str(tmp_path))
        assert [p.rsplit("/", 1)[-1] for p in paths] == ["certificate_3_17.json", "certificate_3_17__3_17.csv"]
