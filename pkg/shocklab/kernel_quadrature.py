"""Numerical certificates for the Duhamel convolution estimates.

Each certificate evaluates the left-hand side of one bound by quadrature on an (x, t) grid
built from the characteristic speeds, divides by the right-hand envelope and records the sup
ratio, which is the empirical constant C.  Grid and quadrature are then refined together and
the sup is recomputed; an estimate is stable when the two agree within 5%.

Time integrals over [0, t] are split at t/2 and written in u with s = u^2 and t - s = u^2.
Kernels that are Gaussian in y get their own integration window per term.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad

from .diffusion_waves import DiffusionWave, eval_wave, wave_derivatives
from .errors import ConfigError, QuadratureNonconvergent
from .systems import Mode
from .templates import (GAUSS_WINDOW, EnvelopeContext, alpha_env, apply_model_kernel, composite_gauss,
                        crude_inequality, excited_bound_terms, excited_e, excited_e_derivatives, excited_row,
                        gtilde_terms, hkernel_collapse, hkernel_time_integral, model_kernel_terms, phi_bound,
                        psi1_bar, psi2)
from .utils import finite_or_none, write_csv, write_json

log = logging.getLogger(__name__)

CERTIFICATE_IDS = ("3.14", "3.15", "3.16", "3.17", "3.19-3.24", "3.26", "3.27", "3.28", "4.38")
GROUPED_IDS = ("3.19", "3.20", "3.21", "3.22", "3.23", "3.24")
LEMMA32_IDS = ("3.14", "3.15", "3.16")
LEMMA35_IDS = ("3.26", "3.27", "3.28")

T_CAP = 100.0
STABILITY_TOL = 0.05
IDENTITY_TOL = 1e-6
DIPOLE_CENTER = -10.0
ROW_COLUMNS = ("x", "t", "lhs", "rhs", "ratio")

DUHAMEL_TIMES = (1.0, 4.0, 16.0, 64.0, 100.0)
SINGLE_TIME_TIMES = tuple(float(t) for t in np.geomspace(1.0, T_CAP, 17))
KERNEL_TIMES = (0.1,) + DUHAMEL_TIMES
COLLAPSE_TIMES = (0.0, 1.0, 5.0, 10.0, 20.0, 30.0)
LIU_TIMES = (16.0, 64.0)

TEMPLATE_KINDS = ("psi", "upsilon", "phi_forcing", "initial_data")
ENVELOPE_PARTS = ("psi1_bar", "psi2", "alpha", "phi", "exp")


@dataclass(frozen=True)
class QuadratureSettings:
    panels: int = 4
    order: int = 8
    rel_tol: float = 0.05
    abs_floor: float = 1e-12
    max_levels: int = 5

    def refined(self) -> "QuadratureSettings":
        return replace(self, panels=2 * self.panels)


@dataclass(frozen=True, eq=False)
class NonlinearityTemplate:
    """Source term of a convolution estimate, evaluable on arrays (y, s).

    psi          (1+s)^-1/4 s^-1/2 (psi1_bar + psi2 + alpha + phi) + (1+s)^-1/2 s^-1/2 e^{-eta|y|}
    upsilon      s^-1/2 (psi1_bar + psi2 + alpha + phi) + s^-1/2 e^{-eta|y|}
    phi_forcing  the vector residual Phi(y, s) of the diffusion-wave ansatz
    initial_data the zero-mass dipole g(y - c) - g(y - c - 1), g = E0 (1+|y|)^-3/2, along ``direction``

    ``parts`` picks which envelope pieces enter psi/upsilon ("exp" is the e^{-eta|y|} term).
    """

    kind: str
    ctx: EnvelopeContext
    scale: float = 1.0
    parts: Tuple[str, ...] = ENVELOPE_PARTS
    forcing: Optional[Callable] = None
    direction: Optional[np.ndarray] = None
    amplitude: float = 0.01
    center: float = DIPOLE_CENTER

    def __post_init__(self):
        if self.kind not in TEMPLATE_KINDS:
            raise ConfigError(f"unknown template kind {self.kind!r}; expected one of {TEMPLATE_KINDS}")
        unknown = set(self.parts) - set(ENVELOPE_PARTS)
        if unknown:
            raise ConfigError(f"unknown envelope parts {sorted(unknown)}")
        if self.kind == "phi_forcing" and self.forcing is None:
            raise ConfigError("phi_forcing template needs a forcing callable")
        if self.kind == "initial_data" and self.direction is None:
            raise ConfigError("initial_data template needs a direction vector")

    @property
    def vector_valued(self) -> bool:
        return self.kind in ("phi_forcing", "initial_data")

    def scaled(self, factor: float) -> "NonlinearityTemplate":
        return replace(self, scale=self.scale * factor)

    def with_parts(self, *parts: str) -> "NonlinearityTemplate":
        return replace(self, parts=tuple(parts))

    def envelope_sum(self, y, s) -> np.ndarray:
        ctx = self.ctx
        y, s = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(s, dtype=float))
        total = np.zeros(y.shape)
        if "psi1_bar" in self.parts:
            total += psi1_bar(ctx, y, s)
        if "psi2" in self.parts:
            total += psi2(ctx, y, s)
        if "alpha" in self.parts:
            total += alpha_env(ctx, y, s)
        if "phi" in self.parts:
            total += phi_bound(ctx, y, s)
        return total

    def dipole(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)

        def g(z):
            return self.amplitude * (1 + np.abs(z)) ** -1.5

        return g(y - self.center) - g(y - self.center - 1.0)

    def __call__(self, y, s=0.0) -> np.ndarray:
        y, s = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(s, dtype=float))
        if self.kind == "initial_data":
            return self.scale * self.dipole(y)[..., None] * self.direction
        if self.kind == "phi_forcing":
            return self.scale * self.forcing(y, s)
        tail = np.exp(-self.ctx.eta * np.abs(y)) if "exp" in self.parts else np.zeros(y.shape)
        base = self.envelope_sum(y, s)
        with np.errstate(divide="ignore"):
            root = s**-0.5
        if self.kind == "psi":
            out = (1 + s) ** -0.25 * root * base + (1 + s) ** -0.5 * root * tail
        else:
            out = root * (base + tail)
        return self.scale * out

    def magnitude(self, y, s=0.0) -> np.ndarray:
        v = self(y, s)
        return np.linalg.norm(v, axis=-1) if self.vector_valued else np.abs(v)


def initial_data_template(ctx: EnvelopeContext, amplitude: float, direction: np.ndarray,
                          center: float = DIPOLE_CENTER) -> NonlinearityTemplate:
    direction = np.asarray(direction, dtype=float)
    return NonlinearityTemplate("initial_data", ctx, direction=direction / np.linalg.norm(direction),
                                amplitude=amplitude, center=center)


@dataclass
class EstimateResult:
    estimate: str
    rhs: str
    rows: np.ndarray
    refined_sup_ratio: float
    coverage: Dict[str, bool] = field(default_factory=dict)
    diagnostics: Dict[str, object] = field(default_factory=dict)
    threshold: Optional[float] = None

    @property
    def sup_ratio(self) -> float:
        return float(np.max(self.rows[:, 4])) if len(self.rows) else 0.0

    @property
    def refinement_delta(self) -> float:
        r1, r2 = self.sup_ratio, self.refined_sup_ratio
        if r1 == 0.0:
            return 0.0 if r2 == 0.0 else float("inf")
        return abs(r2 - r1) / r1

    @property
    def stable(self) -> bool:
        return self.threshold is not None or self.refinement_delta < STABILITY_TOL

    @property
    def passed(self) -> bool:
        finite = bool(np.isfinite(self.sup_ratio) and np.isfinite(self.refined_sup_ratio))
        if self.threshold is not None:
            finite = finite and max(self.sup_ratio, self.refined_sup_ratio) < self.threshold
        return finite and self.stable and all(self.coverage.values())

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "rhs": self.rhs,
            "points": int(len(self.rows)),
            "sup_ratio": finite_or_none(self.sup_ratio),
            "refined_sup_ratio": finite_or_none(self.refined_sup_ratio),
            "refinement_delta": finite_or_none(self.refinement_delta),
            "stable": self.stable,
            "coverage": dict(self.coverage),
            "diagnostics": self.diagnostics,
            "passed": self.passed,
        }


@dataclass
class InequalityCertificate:
    lemma: str
    estimates: List[EstimateResult]
    grid: Dict[str, object] = field(default_factory=dict)

    @property
    def sup_ratio(self) -> float:
        return max((e.sup_ratio for e in self.estimates), default=0.0)

    @property
    def refinement_delta(self) -> float:
        return max((e.refinement_delta for e in self.estimates if e.threshold is None), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.estimates)

    def estimate(self, estimate_id: str) -> EstimateResult:
        for e in self.estimates:
            if e.estimate == estimate_id:
                return e
        raise KeyError(estimate_id)

    def to_dict(self) -> dict:
        return {
            "id": self.lemma,
            "grid": self.grid,
            "estimates": [e.to_dict() for e in self.estimates],
            "sup_ratio": finite_or_none(self.sup_ratio),
            "refinement_delta": finite_or_none(self.refinement_delta),
            "passed": self.passed,
        }

    def export(self, directory: str) -> List[str]:
        os.makedirs(directory, exist_ok=True)
        stem = "certificate_" + self.lemma.replace(".", "_").replace("-", "_")
        paths = [os.path.join(directory, f"{stem}.json")]
        write_json(paths[0], self.to_dict())
        for e in self.estimates:
            path = os.path.join(directory, f"{stem}__{e.estimate.replace('.', '_')}.csv")
            write_csv(path, ROW_COLUMNS, e.rows if len(e.rows) else np.zeros((0, 5)))
            paths.append(path)
        return paths


# grids


def _with_midpoints(points: np.ndarray) -> np.ndarray:
    points = np.unique(points)
    return np.unique(np.concatenate([points, 0.5 * (points[1:] + points[:-1])]))


def refined_times(times: Sequence[float]) -> np.ndarray:
    """Insert geometric means between consecutive positive times (arithmetic next to t = 0)."""
    times = np.unique(np.asarray(times, dtype=float))
    mids = [np.sqrt(a * b) if a > 0 else 0.5 * b for a, b in zip(times[:-1], times[1:])]
    return np.unique(np.concatenate([times, mids]))


def characteristic_points(ctx: EnvelopeContext, t: float, refine: bool = False) -> np.ndarray:
    """x-samples at time t: rays a t, their neighbourhoods a t +- sqrt(t) for outgoing a, the origin,
    points outside the outermost ray, and midpoints between all of these."""
    if t <= 0:
        points = np.array([-5.0, -1.0, 0.0, 1.0, 5.0])
    else:
        far = float(np.max(np.abs(ctx.all_speeds))) * t + 2 * np.sqrt(t) + 2
        points = [0.0, -far, far]
        points += [a * t for a in ctx.all_speeds]
        points += [a * t + sign * np.sqrt(t) for a in ctx.outgoing_speeds for sign in (-1, 1)]
        points = np.array(points)
    points = _with_midpoints(points)
    return _with_midpoints(points) if refine else points


def evaluation_grid(ctx: EnvelopeContext, times: Sequence[float], x_dependent: bool = True,
                    refine: bool = False) -> List[Tuple[float, float]]:
    times = refined_times(times) if refine else np.unique(np.asarray(times, dtype=float))
    if not x_dependent:
        return [(0.0, float(t)) for t in times]
    return [(float(x), float(t)) for t in times for x in characteristic_points(ctx, t, refine)]


def region_coverage(ctx: EnvelopeContext, grid: Sequence[Tuple[float, float]],
                    time_integral: bool = False) -> Dict[str, bool]:
    """Which case regions of the convolution estimates the grid meets.

    outside |x| >= max|a| t, inside |x| <= min|a| t, wedge in between; ``s_split`` records that
    both halves of the split time integral are exercised (any t > 0).
    """
    speeds = np.abs(ctx.all_speeds)
    speeds = speeds[speeds > 0]
    a_max, a_min = float(np.max(speeds)), float(np.min(speeds))
    live = [(abs(x), t) for x, t in grid if t > 0]
    out = {
        "outside": any(ax >= a_max * t for ax, t in live),
        "inside": any(ax <= a_min * t for ax, t in live),
        "wedge": a_min == a_max or any(a_min * t < ax < a_max * t for ax, t in live),
    }
    if time_integral:
        out["s_split"] = bool(live)
    return out


# quadrature


def adaptive(evaluate: Callable[[int], np.ndarray], settings: QuadratureSettings) -> float:
    """Norm of ``evaluate(panels)``, doubling panels until successive values agree.

    Accepts once the change is below rel_tol of the value or below abs_floor.
    """
    panels = settings.panels
    previous = np.atleast_1d(evaluate(panels))
    err = value = float("nan")
    for _ in range(settings.max_levels):
        panels *= 2
        current = np.atleast_1d(evaluate(panels))
        err = float(np.linalg.norm(current - previous))
        value = float(np.linalg.norm(current))
        if err <= max(settings.rel_tol * value, settings.abs_floor):
            return value
        previous = current
    raise QuadratureNonconvergent(
        f"error estimate {err:.3g} exceeds {settings.rel_tol:.0%} of {value:.3g} after {settings.max_levels} doublings")


def split_time_nodes(t: float, panels: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ∫_0^t ds: s = u^2 on [0, t/2], t - s = u^2 on [t/2, t]."""
    nodes, weights = composite_gauss(panels, order)
    half = np.sqrt(0.5 * t)
    u = half * nodes
    w = 2.0 * u * half * weights
    return np.concatenate([u * u, t - u * u]), np.concatenate([w, w])


def _window_nodes(lo, hi, nodes, weights) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    span = np.maximum(hi - lo, 0.0)
    return lo + span * nodes, span * weights


def duhamel_terms(ctx: EnvelopeContext, terms_at: Callable, source: NonlinearityTemplate, x: float, t: float,
                  panels: int, order: int) -> np.ndarray:
    """∫_0^t ∫ K(x, t-s; y) source(y, s) dy ds with K given as Gaussian terms ``terms_at(x, lag)``.

    Vector-valued sources are projected through the terms' (l, r) pairs and the vector integral
    is returned; scalar sources are multiplied by the term values.
    """
    if t <= 0:
        return np.zeros(ctx.n if source.vector_valued else 1)
    s, ws = split_time_nodes(t, panels, order)
    lag = (t - s)[:, None]
    s_col = s[:, None]
    nodes, weights = composite_gauss(panels, order)
    total = np.zeros(ctx.n if source.vector_valued else 1)
    for term in terms_at(x, lag):
        y, wy = _window_nodes(*term.window(), nodes, weights)
        if source.vector_valued:
            vals = apply_model_kernel(ctx, [term], y, source(y, s_col))
            total += np.einsum("s,sq,sqn->n", ws, wy, vals)
        else:
            total += np.einsum("s,sq,sq->", ws, wy, term.value(y) * source(y, s_col))
    return total


def kernel_apply(ctx: EnvelopeContext, terms, source: NonlinearityTemplate, panels: int, order: int) -> np.ndarray:
    """∫ K(y) source(y) dy for one time slice of a signed kernel."""
    nodes, weights = composite_gauss(panels, order)
    total = np.zeros(ctx.n)
    for term in terms:
        lo, hi = (np.reshape(v, -1)[0] for v in term.window())
        y, wy = _window_nodes(lo, hi, nodes, weights)
        total += np.einsum("q,qn->n", wy, apply_model_kernel(ctx, [term], y, source(y, 0.0)))
    return total


def _incoming_sides(ctx: EnvelopeContext):
    yield "-", ctx.incoming_minus, ctx.speeds_minus, ctx.beta_minus, ctx.excited_minus, ctx.left_minus
    yield "+", ctx.incoming_plus, ctx.speeds_plus, ctx.beta_plus, ctx.excited_plus, ctx.left_plus


def excited_windows(ctx: EnvelopeContext, side: str, k: int, lag) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Pieces of the half-line carrying e_k(., lag): the front near -a_k lag, then the plateau up to 0."""
    speeds = ctx.speeds_minus if side == "-" else ctx.speeds_plus
    beta = (ctx.beta_minus if side == "-" else ctx.beta_plus)[k]
    front = abs(speeds[k]) * np.asarray(lag, dtype=float)
    width = np.sqrt(4 * beta * np.asarray(lag, dtype=float))
    lo = -front - GAUSS_WINDOW * width
    mid = np.minimum(0.0, -front + GAUSS_WINDOW * width)
    pieces = [(lo, mid), (mid, np.zeros_like(mid))]
    if side == "+":
        pieces = [(-b, -a) for a, b in pieces]
    return pieces


def duhamel_excited(ctx: EnvelopeContext, source: NonlinearityTemplate, t: float, derivative: Optional[str],
                    panels: int, order: int) -> np.ndarray:
    """∫_0^t ∫ e(y, t-s) . source(y, s) dy ds (``derivative`` "t" for e_t), summed mode by mode."""
    if t <= 0:
        return np.zeros(1)
    s, ws = split_time_nodes(t, panels, order)
    lag = (t - s)[:, None]
    s_col = s[:, None]
    nodes, weights = composite_gauss(panels, order)
    total = 0.0
    for side, idx, _, _, coeff, left in _incoming_sides(ctx):
        for k in idx:
            row = coeff[k] * left[k]
            for lo, hi in excited_windows(ctx, side, int(k), lag):
                y, wy = _window_nodes(lo, hi, nodes, weights)
                if derivative is None:
                    kern = excited_e(ctx, side, int(k), y, lag)
                else:
                    kern = excited_e_derivatives(ctx, side, int(k), y, lag)[0]
                total += float(np.einsum("s,sq,sq->", ws, wy, kern * (source(y, s_col) @ row)))
    return np.array([total])


def excited_initial(ctx: EnvelopeContext, source: NonlinearityTemplate, t: float, derivative: Optional[str],
                    settings: QuadratureSettings) -> float:
    """|∫ e(y, t) . v0(y) dy| by adaptive quadrature with breakpoints at the fronts and the dipole."""
    if t <= 0:
        return 0.0
    reach = max(float(np.max(np.abs(ctx.all_speeds))) * t, 1.0) + GAUSS_WINDOW * np.sqrt(ctx.M * t)
    lo, hi = -reach - abs(source.center) - 1, reach + abs(source.center) + 1
    breaks = [0.0, source.center, source.center + 1.0]
    breaks += [-ctx.speeds_minus[k] * t for k in ctx.incoming_minus]
    breaks += [-ctx.speeds_plus[k] * t for k in ctx.incoming_plus]
    breaks = sorted(b for b in set(breaks) if lo < b < hi)

    def integrand(y):
        return float(excited_row(ctx, y, t, derivative) @ source(y))

    value, err = quad(integrand, lo, hi, points=breaks, limit=50 * settings.panels)
    if err > max(settings.rel_tol * abs(value), settings.abs_floor):
        raise QuadratureNonconvergent(f"excited integral at t={t:g}: error {err:.3g} on value {value:.3g}")
    return abs(value)


# certificates


def _evaluate_grid(lhs: Callable, rhs: Callable, grid, settings: QuadratureSettings, threads: int) -> np.ndarray:
    def point(xt):
        x, t = xt
        value = float(lhs(x, t, settings))
        bound = float(rhs(x, t))
        if bound > 0:
            ratio = value / bound
        else:
            ratio = 0.0 if value == 0 else float("inf")
        return (x, t, value, bound, ratio)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(point, grid))
    return np.array(rows, dtype=float).reshape(-1, len(ROW_COLUMNS))


def _certify(ctx: EnvelopeContext, estimate: str, lhs: Callable, rhs: Callable, rhs_label: str,
             times: Sequence[float], x_dependent: bool, time_integral: bool, settings: QuadratureSettings,
             threads: int) -> EstimateResult:
    grid = evaluation_grid(ctx, times, x_dependent)
    rows = _evaluate_grid(lhs, rhs, grid, settings, threads)
    fine = _evaluate_grid(lhs, rhs, evaluation_grid(ctx, times, x_dependent, refine=True), settings.refined(), threads)
    refined_sup = float(np.max(fine[:, 4])) if len(fine) else 0.0
    result = EstimateResult(
        estimate=estimate,
        rhs=rhs_label,
        rows=rows,
        refined_sup_ratio=refined_sup,
        coverage=region_coverage(ctx, grid, time_integral) if x_dependent else {},
    )
    log.info("estimate %s: sup ratio %.4g, refined %.4g (delta %.2f%%) over %d points",
             estimate, result.sup_ratio, refined_sup, 100 * result.refinement_delta, len(rows))
    return result


def _capped(times: Sequence[float], t_max: float) -> Tuple[float, ...]:
    kept = tuple(t for t in times if t <= t_max)
    if not kept:
        raise ConfigError(f"no certificate times at or below t_max={t_max:g}")
    return kept


def _grid_spec(times: Sequence[float], x_dependent: bool) -> Dict[str, object]:
    return {
        "times": [float(t) for t in times],
        "refined_times": [float(t) for t in refined_times(times)],
        "x_dependent": x_dependent,
    }


def _check_ids(requested: Sequence[str], allowed: Sequence[str]) -> None:
    unknown = [i for i in requested if i not in allowed]
    if unknown:
        raise ConfigError(f"unknown estimate ids {unknown}; expected a subset of {list(allowed)}")


def certify_lemma32(ctx: EnvelopeContext, initial: NonlinearityTemplate, estimates: Sequence[str] = LEMMA32_IDS,
                    settings: Optional[QuadratureSettings] = None, threads: int = 1,
                    t_max: float = T_CAP) -> InequalityCertificate:
    """Linear estimates on a zero-mass dipole: the scattering part against E0 psi2, and the
    excited integrals against E0 (1+t)^-1/2 and E0 (1+t)^-3/2."""
    _check_ids(estimates, LEMMA32_IDS)
    settings = settings or QuadratureSettings()
    kernel_times = _capped(KERNEL_TIMES, t_max)
    single_times = _capped(SINGLE_TIME_TIMES, t_max)
    e0 = initial.amplitude
    results = []
    if "3.14" in estimates:
        def lhs(x, t, q):
            return adaptive(lambda p: kernel_apply(ctx, model_kernel_terms(ctx, x, t), initial, p, q.order), q)

        results.append(_certify(ctx, "3.14", lhs, lambda x, t: e0 * float(psi2(ctx, x, t)), "E0 psi2",
                                kernel_times, True, False, settings, threads))
    for estimate, derivative, power in (("3.15", None, 0.5), ("3.16", "t", 1.5)):
        if estimate not in estimates:
            continue
        results.append(_certify(
            ctx, estimate,
            lambda x, t, q, d=derivative: excited_initial(ctx, initial, t, d, q),
            lambda x, t, p=power: e0 * (1 + t) ** -p, f"E0 (1+t)^-{power:g}",
            single_times, False, False, settings, threads))
    return InequalityCertificate("3.14-3.16" if len(results) > 1 else results[0].estimate, results,
                                 {"x_dependent": _grid_spec(kernel_times, True),
                                  "single_time": _grid_spec(single_times, False)})


def certify_lemma33(ctx: EnvelopeContext, initial: NonlinearityTemplate,
                    settings: Optional[QuadratureSettings] = None, threads: int = 1,
                    t_max: float = T_CAP) -> InequalityCertificate:
    """Hyperbolic part on initial data against E0 e^{-theta t}(1+|x|)^-3/2 with theta = eta0/2."""
    settings = settings or QuadratureSettings()
    times = _capped(COLLAPSE_TIMES, t_max)
    theta = 0.5 * ctx.eta0
    e0 = initial.amplitude

    def lhs(x, t, _):
        return float(hkernel_collapse(ctx, initial.magnitude, x, t))

    result = _certify(ctx, "3.17", lhs, lambda x, t: e0 * np.exp(-theta * t) * (1 + abs(x)) ** -1.5,
                      "E0 e^{-theta t}(1+|x|)^-3/2", times, True, False, settings, threads)
    grid = evaluation_grid(ctx, times)
    result.diagnostics["theta"] = theta
    result.diagnostics["crude_inequality_holds"] = bool(all(
        np.all(crude_inequality(x - a * t, a * t)) for x, t in grid for a in ctx.hyperbolic_speeds))
    return InequalityCertificate("3.17", [result], _grid_spec(times, True))


def certify_lemma34(ctx: EnvelopeContext, forcing: NonlinearityTemplate, estimates: Sequence[str] = GROUPED_IDS,
                    amplitude: float = 0.01, settings: Optional[QuadratureSettings] = None,
                    threads: int = 1, t_max: float = T_CAP) -> InequalityCertificate:
    """Duhamel integrals of the scattering and excited kernels against Psi and Phi."""
    _check_ids(estimates, GROUPED_IDS)
    duhamel_times = _capped(DUHAMEL_TIMES, t_max)
    if not ctx.has_outgoing or not (len(ctx.incoming_minus) + len(ctx.incoming_plus)):
        raise ConfigError("these estimates need at least one outgoing and one incoming mode")
    settings = settings or QuadratureSettings()
    psi = NonlinearityTemplate("psi", ctx)
    e0 = amplitude

    def full_envelope(x, t):
        return float(psi1_bar(ctx, x, t) + psi2(ctx, x, t) + alpha_env(ctx, x, t))

    specs = {
        "3.19": (lambda x, lag: gtilde_terms(ctx, "y", x, lag), psi, full_envelope,
                 "psi1_bar + psi2 + alpha", True),
        "3.20": (lambda x, lag: model_kernel_terms(ctx, x, lag), forcing,
                 lambda x, t: e0 * float(psi1_bar(ctx, x, t) + psi2(ctx, x, t)), "E0 (psi1_bar + psi2)", True),
        "3.21": (lambda x, lag: excited_bound_terms(ctx, "y", lag), psi, lambda x, t: (1 + t) ** -0.75,
                 "(1+t)^-3/4", False),
        "3.24": (lambda x, lag: excited_bound_terms(ctx, "yt", lag), psi, lambda x, t: (1 + t) ** -1.0,
                 "(1+t)^-1", False),
    }
    results = []
    for estimate in GROUPED_IDS:
        if estimate not in estimates:
            continue
        if estimate in specs:
            terms_at, source, rhs, label, x_dependent = specs[estimate]

            def lhs(x, t, q, terms_at=terms_at, source=source):
                return adaptive(lambda p: duhamel_terms(ctx, terms_at, source, x, t, p, q.order), q)

            times = duhamel_times
        else:
            derivative, power = (None, 0.5) if estimate == "3.22" else ("t", 1.0)

            def lhs(x, t, q, derivative=derivative):
                return adaptive(lambda p: duhamel_excited(ctx, forcing, t, derivative, p, q.order), q)

            rhs = lambda x, t, power=power: e0 * (1 + t) ** -power
            label, x_dependent, times = f"E0 (1+t)^-{power:g}", False, duhamel_times
        result = _certify(ctx, estimate, lhs, rhs, label, times, x_dependent, True, settings, threads)
        if estimate == "3.19":
            at = result.rows[(result.rows[:, 0] == 0.0) & (result.rows[:, 1] == 16.0)]
            if len(at):
                allowance = 16.0**-1 * np.log(np.e + 16.0)
                result.diagnostics["log_allowance_ratio_x0_t16"] = float(at[0, 2] / allowance)
        results.append(result)
    lemma = results[0].estimate if len(results) == 1 else "3.19-3.24"
    return InequalityCertificate(lemma, results, _grid_spec(duhamel_times, True))


def _unit_difference(integral: Callable) -> Callable:
    """x-derivative of a collapsed integral resolved on the unit scale of the envelopes."""
    return lambda x, t: abs(integral(x + 0.5, t) - integral(x - 0.5, t))


def certify_lemma35(ctx: EnvelopeContext, variant: str, forcing: Optional[NonlinearityTemplate] = None,
                    amplitude: float = 0.01, settings: Optional[QuadratureSettings] = None,
                    threads: int = 1, t_max: float = T_CAP) -> InequalityCertificate:
    """Hyperbolic Duhamel integrals: H against Upsilon (3.26), H_x against Upsilon (3.27), H against Phi (3.28)."""
    _check_ids([variant], LEMMA35_IDS)
    settings = settings or QuadratureSettings()
    times = _capped(DUHAMEL_TIMES, t_max)
    upsilon = NonlinearityTemplate("upsilon", ctx)

    def full_envelope(x, t):
        return float(psi1_bar(ctx, x, t) + psi2(ctx, x, t) + alpha_env(ctx, x, t))

    if variant == "3.28":
        if forcing is None:
            raise ConfigError("estimate 3.28 needs the Phi forcing template")
        weight, rhs, label = forcing.magnitude, (lambda x, t: amplitude * full_envelope(x, t)), \
            "E0 (psi1_bar + psi2 + alpha)"
    else:
        weight, rhs, label = upsilon, full_envelope, "psi1_bar + psi2 + alpha"

    def lhs(x, t, q):
        def evaluate(p):
            integral = hkernel_time_integral(ctx, weight, panels=p, order=q.order)
            return _unit_difference(integral)(x, t) if variant == "3.27" else integral(x, t)
        return adaptive(evaluate, q)

    result = _certify(ctx, variant, lhs, rhs, label, times, True, True, settings, threads)
    if variant == "3.26":
        result.diagnostics.update(_intermediate_bounds(ctx, upsilon, settings, times))
    return InequalityCertificate(variant, [result], _grid_spec(times, True))


def _intermediate_bounds(ctx: EnvelopeContext, upsilon: NonlinearityTemplate,
                         settings: QuadratureSettings, times: Sequence[float]) -> Dict[str, object]:
    """Ratios of single-piece H integrals to the intermediate decay shapes (min, max over the grid)."""
    shapes = {
        "psi1_bar": lambda x, t: sum((1 + abs(x - a * t)) ** -0.75 for a in ctx.outgoing_speeds) / (1 + t),
        "alpha": lambda x, t: (1 + abs(x)) ** -0.5 / (1 + t),
    }
    out = {}
    for part, shape in shapes.items():
        piece = upsilon.with_parts(part)
        ratios = []
        for x, t in evaluation_grid(ctx, times):
            value = adaptive(lambda p: hkernel_time_integral(ctx, piece, panels=p, order=settings.order)(x, t),
                             settings)
            ratios.append(value / shape(x, t))
        out[f"intermediate_{part}"] = {"min": float(np.min(ratios)), "max": float(np.max(ratios))}
    return out


# integration by parts in time


def heat_kernel(x, tau, xi, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """g(x, tau; xi) = (4 pi beta tau)^-1/2 e^{-(x-xi)^2 / 4 beta tau} and g_tau."""
    x, tau, xi = (np.asarray(v, dtype=float) for v in (x, tau, xi))
    g = (4 * np.pi * beta * tau) ** -0.5 * np.exp(-((x - xi) ** 2) / (4 * beta * tau))
    return g, g * (-0.5 / tau + (x - xi) ** 2 / (4 * beta * tau**2))


def _liu_modes(ctx: EnvelopeContext) -> Tuple[int, int]:
    if not len(ctx.outgoing_minus):
        raise ConfigError("the interaction identity needs an outgoing mode on the left")
    k = int(ctx.outgoing_minus[0])
    others = [j for j in range(ctx.n) if ctx.speeds_minus[j] != ctx.speeds_minus[k]]
    if not others:
        raise ConfigError("the interaction identity needs two distinct left speeds")
    return k, others[-1]


def interaction_identity_sides(wave: DiffusionWave, a_j: float, a_k: float, beta_j: float, x: float, t: float,
                               s: float, xi: float, step: float = 1e-3) -> Tuple[float, float, float]:
    """Both sides of

        (a_j - a_k) g (phi^2)_xi = d/ds [g phi^2] + g_tau phi^2 - g (phi^2)_tau

    with g = g(x, t-s; xi), phi = phi(xi - a_j (t-s) - a_k s, s).  The s-derivative is a
    Richardson-extrapolated centered difference; everything else is analytic.  Returns
    (lhs, rhs, scale) where scale is the largest single term.
    """
    def product(s_):
        zeta = xi - a_j * (t - s_) - a_k * s_
        g, _ = heat_kernel(x, t - s_, xi, beta_j)
        return float(g * eval_wave(wave, zeta, s_) ** 2)

    zeta = xi - a_j * (t - s) - a_k * s
    phi = float(eval_wave(wave, zeta, s))
    phi_x, phi_t = (float(v) for v in wave_derivatives(wave, zeta, s))
    g, g_tau = (float(v) for v in heat_kernel(x, t - s, xi, beta_j))
    coarse = (product(s + step) - product(s - step)) / (2 * step)
    fine = (product(s + step / 2) - product(s - step / 2)) / step
    d_ds = (4 * fine - coarse) / 3
    lhs = (a_j - a_k) * g * 2 * phi * phi_x
    terms = (d_ds, g_tau * phi**2, g * 2 * phi * phi_t)
    rhs = terms[0] + terms[1] - terms[2]
    return lhs, rhs, max(abs(lhs), *(abs(v) for v in terms))


def middle_time_integral(wave: DiffusionWave, a_j: float, a_k: float, beta_j: float, x: float, t: float,
                         panels: int, order: int) -> float:
    """∫_{sqrt t}^{t - sqrt t} |∫ g(x, t-s; xi) (phi^2)_xi dxi| ds."""
    lo, hi = np.sqrt(t), t - np.sqrt(t)
    if hi <= lo:
        return 0.0
    nodes, weights = composite_gauss(panels, order)
    s = lo + (hi - lo) * nodes
    ws = (hi - lo) * weights
    center = a_j * (t - s) + a_k * s
    half = GAUSS_WINDOW * np.sqrt(4 * wave.beta * (1 + s))
    xi, wxi = _window_nodes((center - half)[:, None], (center + half)[:, None], nodes, weights)
    zeta = xi - center[:, None]
    phi = eval_wave(wave, zeta, s[:, None])
    phi_x, _ = wave_derivatives(wave, zeta, s[:, None])
    g, _ = heat_kernel(x, (t - s)[:, None], xi, beta_j)
    inner = np.sum(wxi * g * 2 * phi * phi_x, axis=1)
    return float(np.sum(ws * np.abs(inner)))


def liu_integration_by_parts_check(ctx: EnvelopeContext, gamma: float = 0.5, amplitude: float = 0.01,
                                   points: int = 50, seed: int = 0, settings: Optional[QuadratureSettings] = None,
                                   threads: int = 1, t_max: float = T_CAP) -> InequalityCertificate:
    """Check the integration-by-parts identity for the phi^2 interaction and the middle-time bound.

    k is the first outgoing left mode, j another left mode with a different speed; phi is the
    zero-speed diffusion wave of mode k with mass ``amplitude`` and coupling ``gamma``.
    """
    settings = settings or QuadratureSettings()
    k, j = _liu_modes(ctx)
    liu_times = _capped(LIU_TIMES, t_max)
    horizon = max(2.0, min(50.0, t_max))
    a_k, a_j = float(ctx.speeds_minus[k]), float(ctx.speeds_minus[j])
    beta_j = float(ctx.beta_minus[j])
    wave = DiffusionWave(mass=amplitude, speed=0.0, beta=float(ctx.beta_minus[k]), gamma=gamma, mode=Mode("-", k))

    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(points):
        t = rng.uniform(min(1.0, horizon), horizon)
        s = rng.uniform(0.1, 0.9) * t
        xi = a_j * (t - s) + a_k * s + np.sqrt(4 * wave.beta * (1 + s)) * rng.standard_normal()
        x = xi + np.sqrt(4 * beta_j * (t - s)) * rng.standard_normal()
        samples.append((x, t, s, xi))

    def residual_rows(step):
        rows = []
        for x, t, s, xi in samples:
            lhs, rhs, scale = interaction_identity_sides(wave, a_j, a_k, beta_j, x, t, s, xi, step)
            rows.append((x, t, lhs, rhs, abs(lhs - rhs) / scale if scale > 0 else 0.0))
        return np.array(rows, dtype=float)

    identity_rows = residual_rows(1e-3)
    identity = EstimateResult(
        estimate="4.38-identity",
        rhs="d/ds[g phi^2] + g_tau phi^2 - g (phi^2)_tau",
        rows=identity_rows,
        refined_sup_ratio=float(np.max(residual_rows(5e-4)[:, 4])),
        diagnostics={"modes": {"k": k, "j": j}, "speeds": {"a_k": a_k, "a_j": a_j}, "seed": seed},
        threshold=IDENTITY_TOL,
    )
    log.info("interaction identity: max relative residual %.3g at %d points", identity.sup_ratio, points)

    def lhs(x, t, q):
        return adaptive(lambda p: np.array([middle_time_integral(wave, a_j, a_k, beta_j, x, t, p, q.order)]), q)

    def rhs(x, t):
        return amplitude**2 / t * np.exp(-((x - a_k * t) ** 2) / (ctx.M * t))

    middle_grid = [(a_k * t, t) for t in liu_times]
    rows = _evaluate_grid(lhs, rhs, middle_grid, settings, threads)
    fine = _evaluate_grid(lhs, rhs, [(a_k * t, t) for t in refined_times(liu_times)], settings.refined(), threads)
    middle = EstimateResult(
        estimate="4.38-middle",
        rhs="E0^2 t^-1 e^{-(x - a_k t)^2 / M t}",
        rows=rows,
        refined_sup_ratio=float(np.max(fine[:, 4])),
    )
    log.info("middle-time integral: sup ratio %.4g (refined %.4g)", middle.sup_ratio, middle.refined_sup_ratio)
    return InequalityCertificate("4.38", [identity, middle], {"times": list(liu_times), "points": points})
