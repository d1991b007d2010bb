"""Envelope templates, excited kernels, Gaussian kernel terms and the hyperbolic part."""
import numpy as np
import pytest
from scipy.integrate import quad

from shocklab.errors import ConfigError
from shocklab.systems import Mode, endstate_data
from shocklab.templates import (GaussianTerm, alpha_env, build_context, composite_gauss, crude_inequality, errfn,
                                excited_e, excited_e_derivatives, excited_row, fallback_envelope, gtilde_bound,
                                gtilde_terms, hkernel_collapse, hkernel_time_integral, model_kernel_terms, psi1,
                                psi1_bar, psi2, psi2_interpolation_ratio, psi_comparison, theorem_envelope)


def _grid():
    x = np.linspace(-60, 60, 241)
    t = np.array([0.0, 0.5, 1.0, 4.0, 16.0, 64.0])
    return np.meshgrid(x, t, indexing="ij")


class TestContext:
    def test_defaults(self, psystem, psystem_profile, psystem_ctx):
        assert psystem_ctx.M == pytest.approx(4.0)
        assert psystem_ctx.eta == pytest.approx(0.5 * psystem_profile.decay_rate)
        assert psystem_ctx.has_outgoing
        assert list(psystem_ctx.outgoing_minus) == [0]
        assert len(psystem_ctx.outgoing_plus) == 0

    def test_small_M_rejected(self, psystem, psystem_profile):
        dm, dp = endstate_data(psystem, "-"), endstate_data(psystem, "+")
        with pytest.raises(ConfigError):
            build_context(dm, dp, psystem_profile.decay_rate, M=1.0)

    def test_nonpositive_eta_rejected(self, psystem, psystem_profile):
        dm, dp = endstate_data(psystem, "-"), endstate_data(psystem, "+")
        with pytest.raises(ConfigError):
            build_context(dm, dp, psystem_profile.decay_rate, eta=0.0)

    def test_reflection_is_an_involution(self, psystem_ctx):
        back = psystem_ctx.reflected().reflected()
        np.testing.assert_array_equal(back.speeds_minus, psystem_ctx.speeds_minus)
        np.testing.assert_array_equal(back.right_plus, psystem_ctx.right_plus)

    def test_chi_is_the_cone(self, psystem_ctx):
        a_lo, a_hi = psystem_ctx.speeds_minus[0], psystem_ctx.speeds_plus[-1]
        t = 10.0
        assert psystem_ctx.chi(a_lo * t, t) == 1.0
        assert psystem_ctx.chi(a_lo * t - 1, t) == 0.0
        assert psystem_ctx.chi(a_hi * t + 1, t) == 0.0


class TestEnvelopes:
    def test_errfn_limits(self):
        np.testing.assert_allclose(errfn([-np.inf, 0.0, np.inf]), [0.0, 0.5, 1.0])

    def test_crude_inequality(self, rng):
        a = rng.uniform(-1e3, 1e3, 10000)
        b = rng.uniform(-1e3, 1e3, 10000)
        assert np.all(crude_inequality(a, b))

    def test_psi1_below_psi1_bar(self, psystem_ctx):
        x, t = _grid()
        assert np.all(psi1(psystem_ctx, x, t) <= psi1_bar(psystem_ctx, x, t))

    def test_psi_comparison(self, psystem_ctx):
        x, t = _grid()
        lo, hi = psi_comparison(psystem_ctx, x, t)
        assert 0 < lo <= hi <= 1 + 1e-12

    def test_psi2_interpolation(self, psystem_ctx):
        x, t = _grid()
        assert psi2_interpolation_ratio(psystem_ctx, x, t) <= 1 + 1e-12

    def test_alpha_outside_cone(self, psystem_ctx):
        far = psystem_ctx.speeds_plus[-1] * 10.0 + 5.0
        assert alpha_env(psystem_ctx, far, 10.0) == 0.0

    def test_psi2_positive_everywhere(self, psystem_ctx):
        x, t = _grid()
        assert np.all(psi2(psystem_ctx, x, t) > 0)

    def test_theorem_envelope_sum(self, psystem_ctx):
        x, t = _grid()
        total = psi1(psystem_ctx, x, t) + psi2(psystem_ctx, x, t) + alpha_env(psystem_ctx, x, t)
        np.testing.assert_allclose(theorem_envelope(psystem_ctx, x, t), total)

    def test_fallback_without_outgoing(self, burgers_ctx):
        assert not burgers_ctx.has_outgoing
        x, t = _grid()
        np.testing.assert_array_equal(theorem_envelope(burgers_ctx, x, t), fallback_envelope(burgers_ctx, x, t))
        assert np.all(fallback_envelope(burgers_ctx, x, t) > 0)


class TestExcited:
    def test_derivatives_left(self, psystem_ctx):
        k = int(psystem_ctx.incoming_minus[0])
        y = np.linspace(-8, -0.1, 40)
        t, h = 2.0, 1e-5
        e_t, e_y = excited_e_derivatives(psystem_ctx, "-", k, y, t)
        fd_t = (excited_e(psystem_ctx, "-", k, y, t + h) - excited_e(psystem_ctx, "-", k, y, t - h)) / (2 * h)
        fd_y = (excited_e(psystem_ctx, "-", k, y + h, t) - excited_e(psystem_ctx, "-", k, y - h, t)) / (2 * h)
        np.testing.assert_allclose(e_t, fd_t, atol=1e-8)
        np.testing.assert_allclose(e_y, fd_y, atol=1e-8)

    def test_derivatives_right(self, psystem_ctx):
        y = np.linspace(0.1, 8, 40)
        t, h = 3.0, 1e-5
        for k in psystem_ctx.incoming_plus:
            e_t, e_y = excited_e_derivatives(psystem_ctx, "+", int(k), y, t)
            fd_y = (excited_e(psystem_ctx, "+", int(k), y + h, t) - excited_e(psystem_ctx, "+", int(k), y - h, t)) / (2 * h)
            fd_t = (excited_e(psystem_ctx, "+", int(k), y, t + h) - excited_e(psystem_ctx, "+", int(k), y, t - h)) / (2 * h)
            np.testing.assert_allclose(e_y, fd_y, atol=1e-8)
            np.testing.assert_allclose(e_t, fd_t, atol=1e-8)

    def test_excited_plateau(self, psystem_ctx):
        # e_k -> 1 well inside the front, 0 at t = 0
        k = int(psystem_ctx.incoming_minus[0])
        a = psystem_ctx.speeds_minus[k]
        t = 2000.0
        assert excited_e(psystem_ctx, "-", k, -0.5 * a * t, t) == pytest.approx(1.0, abs=1e-10)
        assert excited_e(psystem_ctx, "-", k, -1.0, 0.0) == 0.0

    def test_outgoing_mode_rejected(self, psystem_ctx):
        with pytest.raises(ValueError):
            excited_e(psystem_ctx, "-", int(psystem_ctx.outgoing_minus[0]), -1.0, 1.0)

    def test_row_shape(self, psystem_ctx):
        y = np.linspace(-5, 5, 11)
        assert excited_row(psystem_ctx, y, 1.0).shape == (11, 2)


class TestKernelTerms:
    def test_bad_order(self, psystem_ctx):
        with pytest.raises(ValueError):
            gtilde_terms(psystem_ctx, "xy", 0.0, 1.0)

    def test_bound_positive_near_ray(self, psystem_ctx):
        t = 4.0
        a = psystem_ctx.speeds_minus[0]
        # source just left of the shock: the convected Gaussian along a_1^- carries it
        assert gtilde_bound(psystem_ctx, "0", -1.0 + a * t, t, np.array([-1.0]))[0] > 0

    def test_term_window_clips_support(self):
        term = GaussianTerm("convection", np.array(1.0), np.array(-2.0), np.array(4.0), np.array(-np.inf),
                            np.array(0.0))
        lo, hi = term.window()
        assert hi == 0.0
        assert lo == pytest.approx(-2.0 - 8.0 * np.sqrt(2.0))
        assert term.value(1.0) == 0.0
        assert term.value(-2.0) == 1.0

    def test_mirrored_term(self):
        term = GaussianTerm("reflection", np.array(1.0), np.array(-2.0), np.array(4.0), np.array(-5.0),
                            np.array(0.0))
        m = term.mirrored(2)
        assert (float(m.center), float(m.lo), float(m.hi)) == (2.0, 0.0, 5.0)

    def test_model_kernel_convects_heat_kernels(self, psystem_ctx):
        # far from the shock the model kernel is sum_k r_k l_k (4 pi beta t)^-1/2 e^{-(x-y-a_k t)^2 / 4 beta t}
        t, y = 2.0, -40.0
        x = y + psystem_ctx.speeds_minus[0] * t
        peak = sum(float(term.value(y)) for term in model_kernel_terms(psystem_ctx, x, t)
                   if term.kind == "convection" and term.source == Mode("-", 0))
        assert peak == pytest.approx((4 * np.pi * psystem_ctx.beta_minus[0] * t) ** -0.5, rel=1e-6)


class TestHyperbolic:
    def test_composite_gauss(self):
        nodes, weights = composite_gauss(4, 8)
        assert weights.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.sum(weights * nodes**9) == pytest.approx(0.1, abs=1e-14)
        assert np.all((nodes > 0) & (nodes < 1))

    def test_collapse_at_time_zero(self, psystem_ctx):
        def v0(y):
            return np.exp(-np.asarray(y) ** 2)

        count = len(psystem_ctx.hyperbolic_speeds)
        x = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(hkernel_collapse(psystem_ctx, v0, x, 0.0), count * v0(x))

    def test_collapse_location(self, psystem_ctx):
        def v0(y):
            return np.exp(-(np.asarray(y) - 2.0) ** 2)

        x, t = 1.0, 3.0
        expected = np.exp(-psystem_ctx.eta0 * t) * sum(v0(a * t - x) for a in psystem_ctx.hyperbolic_speeds)
        np.testing.assert_allclose(hkernel_collapse(psystem_ctx, v0, x, t), expected, rtol=1e-12)
        mirrored = np.exp(-psystem_ctx.eta0 * t) * sum(v0(x - a * t) for a in psystem_ctx.hyperbolic_speeds)
        assert abs(float(hkernel_collapse(psystem_ctx, v0, x, t)) - mirrored) > 1e-3

    def test_time_integral_matches_quad(self, psystem_ctx):
        def weight(y, s):
            return np.exp(-(np.asarray(y) - 1.0) ** 2) / np.sqrt(1.0 + s)

        x, t = 0.5, 2.0
        eta0 = psystem_ctx.eta0
        expected = sum(quad(lambda s, a=a: np.exp(-eta0 * (t - s)) * weight(a * (t - s) - x, s), 0.0, t,
                            epsabs=1e-13, epsrel=1e-12)[0] for a in psystem_ctx.hyperbolic_speeds)
        integral = hkernel_time_integral(psystem_ctx, weight, panels=32, order=8)
        assert integral(x, t) == pytest.approx(expected, rel=1e-8)

    def test_time_integral_of_constant(self, psystem_ctx):
        integral = hkernel_time_integral(psystem_ctx, lambda y, s: np.ones_like(y), panels=16, order=8)
        t = 5.0
        eta0 = psystem_ctx.eta0
        expected = len(psystem_ctx.hyperbolic_speeds) * (1 - np.exp(-eta0 * t)) / eta0
        assert integral(0.0, t) == pytest.approx(expected, rel=1e-10)
        assert integral(0.0, 0.0) == 0.0
