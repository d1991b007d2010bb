from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .decomposition import ShiftTrack
from .errors import EnvelopeVanishes, NormAtNoiseFloor
from .evolution import Trajectory
from .profile import ShockProfile
from .templates import EnvelopeContext, excited_row, gtilde_bound, theorem_envelope
from .utils import finite_or_none

log = logging.getLogger(__name__)

ENVELOPE_FLOOR = 1e-12
NOISE_FLOOR = 1e-12
MIN_FIT_POINTS = 8
FAR_FIELD_GAP = 0.05

LP_PREDICTIONS = {
    "theorem": {"1": -0.25, "2": -0.5, "inf": -0.75},
    "tracked": {"1": -0.25, "2": -0.5, "inf": -0.75},
    "untracked": {"1": -0.25, "2": -0.5, "inf": -0.5},
}


@dataclass
class RateFit:
    exponent: float
    ci: float
    intercept: float
    points: int
    excluded: int
    prediction: Optional[float] = None
    tolerance: float = 0.1
    at_noise_floor: bool = False

    @property
    def passed(self) -> bool:
        if self.at_noise_floor:
            return True
        if self.prediction is None:
            return bool(np.isfinite(self.exponent))
        return bool(self.exponent <= self.prediction + self.tolerance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exponent"] = finite_or_none(self.exponent)
        d["ci"] = finite_or_none(self.ci)
        d["intercept"] = finite_or_none(self.intercept)
        d["passed"] = self.passed
        return d


@dataclass
class RatioSeries:
    times: np.ndarray
    ratio: np.ndarray
    fallback: bool = False
    slope: Optional[RateFit] = None

    @property
    def bounded(self) -> bool:
        finite = bool(np.all(np.isfinite(self.ratio)))
        return finite and (self.slope is None or self.slope.passed)

    def to_dict(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "ratio": [finite_or_none(r) for r in self.ratio],
            "max": finite_or_none(np.max(self.ratio)) if len(self.ratio) else 0.0,
            "fallback_envelope": self.fallback,
            "log_slope": self.slope.to_dict() if self.slope else None,
            "bounded": self.bounded,
        }


@dataclass
class VerificationReport:
    pointwise: RatioSeries
    derivative: RatioSeries
    lp: Dict[str, Dict[str, RateFit]]
    shift: Dict[str, RateFit]
    zeta: RatioSeries
    mass: Dict[str, float] = field(default_factory=dict)
    extras: Dict[str, object] = field(default_factory=dict)

    @property
    def checks(self) -> Dict[str, bool]:
        out = {
            "pointwise_bounded": self.pointwise.bounded,
            "derivative_bounded": self.derivative.bounded,
            "zeta_bounded": self.zeta.bounded,
            "delta_rate": self.shift["delta"].passed,
            "delta_dot_rate": self.shift["delta_dot"].passed,
        }
        for variant, fits in self.lp.items():
            if variant == "tracked":
                continue
            for p, fit in fits.items():
                out[f"lp_{variant}_{p}"] = fit.passed
        if "drift" in self.mass:
            out["mass_conserved"] = bool(self.mass["drift"] <= self.mass["drift_bound"])
        if "shift_split" in self.extras:
            out["shift_split"] = bool(self.extras["shift_split"]["passed"])
        changes = [g["c_fit_change"] for g in self.extras.get("green", []) if g.get("c_fit_change") is not None]
        if changes:
            out["green_refinement_stable"] = bool(max(changes) < 0.1)
        far = [g["heat_kernel_gap"] for g in self.extras.get("green", []) if g.get("far_field")]
        if far:
            out["green_far_field"] = bool(max(far) <= FAR_FIELD_GAP)
        if "refinement_max_change" in self.extras:
            out["refinement_stable"] = bool(self.extras["refinement_max_change"] < 0.02)
        return out

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "pointwise": self.pointwise.to_dict(),
            "derivative": self.derivative.to_dict(),
            "lp": {v: {p: f.to_dict() for p, f in fits.items()} for v, fits in self.lp.items()},
            "shift": {k: f.to_dict() for k, f in self.shift.items()},
            "zeta": self.zeta.to_dict(),
            "mass": {k: finite_or_none(v) for k, v in self.mass.items()},
            "extras": self.extras,
            "checks": self.checks,
            "passed": self.passed,
        }


def fit_rate(times, values, t_min: float = 10.0, noise_floor: float = NOISE_FLOOR,
             prediction: Optional[float] = None, tolerance: float = 0.1) -> RateFit:
    """Least-squares slope of log(value) against log(1+t) over t >= t_min, values above the floor."""
    times = np.asarray(times, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    window = times >= t_min
    usable = window & (values > noise_floor)
    excluded = int(np.count_nonzero(window & ~usable))
    if excluded:
        log.warning("%d snapshots at or below the noise floor %.1e left out of the fit", excluded, noise_floor)
    count = int(np.count_nonzero(usable))
    if count < 3:
        raise NormAtNoiseFloor(f"only {count} snapshots above the noise floor for t >= {t_min}")
    if count < MIN_FIT_POINTS:
        log.warning("rate fitted on %d snapshots (fewer than %d)", count, MIN_FIT_POINTS)
    fit = stats.linregress(np.log1p(times[usable]), np.log(values[usable]))
    ci = float(stats.t.ppf(0.975, count - 2) * fit.stderr) if count > 2 else float("nan")
    return RateFit(exponent=float(fit.slope), ci=ci, intercept=float(fit.intercept), points=count,
                   excluded=excluded, prediction=prediction, tolerance=tolerance)


def _envelope(ctx: EnvelopeContext, x, t, bar: bool) -> np.ndarray:
    return theorem_envelope(ctx, x, t, bar=bar)


def _sup_ratio(v: np.ndarray, env: np.ndarray, floor: float) -> float:
    mag = np.linalg.norm(v, axis=-1) if v.ndim > 1 else np.abs(v)
    live = env > floor
    stray = (~live) & (mag > max(NOISE_FLOOR, 1e-8 * float(np.max(mag, initial=0.0))))
    if np.any(stray):
        raise EnvelopeVanishes(f"{int(np.count_nonzero(stray))} mesh points carry a perturbation where the envelope vanishes")
    if not np.any(live):
        return 0.0
    return float(np.max(mag[live] / env[live]))


def _ratio_slope(times, ratio, t_min: float, tolerance: float = 0.05) -> Optional[RateFit]:
    try:
        return fit_rate(times, ratio, t_min=t_min, noise_floor=1e-300, prediction=0.0, tolerance=tolerance)
    except NormAtNoiseFloor:
        return None


def pointwise_ratio(residual: Trajectory, ctx: EnvelopeContext, fit_t_min: float = 10.0,
                    floor: float = ENVELOPE_FLOOR, slope_tolerance: float = 0.05) -> RatioSeries:
    """rho(t) = sup_x |v(x,t)| / (psi1 + psi2 + alpha)(x,t)."""
    fallback = not ctx.has_outgoing
    if fallback:
        log.warning("no outgoing modes: using the fallback envelope alpha + (1+t)^-3/4 e^{-eta|x|}")
    ratio = np.array([_sup_ratio(f.values, _envelope(ctx, f.x, f.t, bar=False), floor) for f in residual.fields])
    return RatioSeries(times=residual.times.copy(), ratio=ratio, fallback=fallback,
                       slope=_ratio_slope(residual.times, ratio, fit_t_min, slope_tolerance))


def derivative_envelope_check(residual: Trajectory, ctx: EnvelopeContext, t_min: float = 0.5,
                              fit_t_min: float = 10.0, floor: float = ENVELOPE_FLOOR,
                              slope_tolerance: float = 0.05) -> RatioSeries:
    """sup_x |v_x| / (t^-1/2 (1+t)^1/2 (psi1_bar + psi2 + alpha)) for snapshots with t >= t_min."""
    times, ratio = [], []
    for f in residual.fields:
        if f.t < t_min:
            continue
        v_x = np.gradient(f.values, f.x, axis=0)
        env = f.t**-0.5 * (1 + f.t) ** 0.5 * _envelope(ctx, f.x, f.t, bar=True)
        times.append(f.t)
        ratio.append(_sup_ratio(v_x, env, floor))
    times, ratio = np.array(times), np.array(ratio)
    return RatioSeries(times=times, ratio=ratio, fallback=not ctx.has_outgoing,
                       slope=_ratio_slope(times, ratio, fit_t_min, slope_tolerance))


def lp_norms(residual: Trajectory) -> Dict[str, np.ndarray]:
    mags = [np.linalg.norm(f.values, axis=-1) for f in residual.fields]
    x = residual.x
    return {
        "1": np.array([trapezoid(m, x) for m in mags]),
        "2": np.array([np.sqrt(trapezoid(m * m, x)) for m in mags]),
        "inf": np.array([np.max(m) for m in mags]),
    }


def lp_rates(residual: Trajectory, variant: str = "theorem", t_min: float = 10.0,
             noise_floor: float = NOISE_FLOOR, tolerance: float = 0.1) -> Dict[str, RateFit]:
    """Fitted decay exponents of ||v||_{L^p}, p in {1, 2, inf}, against the predicted rates."""
    if np.count_nonzero(residual.times >= 1) < MIN_FIT_POINTS:
        log.warning("fewer than %d snapshots with t >= 1", MIN_FIT_POINTS)
    predictions = LP_PREDICTIONS[variant]
    norms = lp_norms(residual)
    out = {}
    for p, series in norms.items():
        try:
            out[p] = fit_rate(residual.times, series, t_min, noise_floor, predictions[p], tolerance)
        except NormAtNoiseFloor:
            log.warning("L^%s norm of the %s residual is at the noise floor", p, variant)
            out[p] = RateFit(float("nan"), float("nan"), float("nan"), 0, len(series), predictions[p],
                             tolerance, at_noise_floor=True)
    return out


def shift_rates(track: ShiftTrack, t_min: float = 10.0, noise_floor: float = 1e-10,
                amplitude: float = 1.0) -> Dict[str, RateFit]:
    """Fits of |delta| (predicted -1/2, tolerance 0.1) and |delta_dot| (predicted -1, tolerance 0.15)."""
    out = {}
    for key, series, prediction, tol, weight in (
        ("delta", track.delta, -0.5, 0.1, 0.5),
        ("delta_dot", track.delta_dot, -1.0, 0.15, 1.0),
    ):
        window = track.times >= t_min
        if not np.any(np.abs(series[window]) > noise_floor):
            log.info("|%s| is at the noise floor for t >= %g", key, t_min)
            out[key] = RateFit(float("nan"), float("nan"), float("nan"), 0, int(np.count_nonzero(window)),
                               prediction, tol, at_noise_floor=True)
            continue
        try:
            out[key] = fit_rate(track.times, series, t_min, noise_floor, prediction, tol)
        except NormAtNoiseFloor:
            out[key] = RateFit(float("nan"), float("nan"), float("nan"), 0, int(np.count_nonzero(window)),
                               prediction, tol, at_noise_floor=True)
        constant = float(np.max(np.abs(series) * (1 + track.times) ** weight)) / amplitude
        log.info("%s: fitted exponent %.3f, envelope constant %.3g", key, out[key].exponent, constant)
    return out


def shift_constants(track: ShiftTrack, amplitude: float) -> Dict[str, float]:
    """Smallest C with |delta| <= C E0 (1+t)^-1/2 and |delta_dot| <= C E0 (1+t)^-1 on the track."""
    return {
        "delta": float(np.max(np.abs(track.delta) * (1 + track.times) ** 0.5)) / amplitude,
        "delta_dot": float(np.max(np.abs(track.delta_dot) * (1 + track.times))) / amplitude,
    }


def zeta_series(residual: Trajectory, track: ShiftTrack, ctx: EnvelopeContext, fit_t_min: float = 10.0,
                floor: float = ENVELOPE_FLOOR, slope_tolerance: float = 0.05) -> RatioSeries:
    """Running sup of |v|/env + |v_x|/env_x + |delta|(1+s)^1/2 + |delta_dot|(1+s); t > 0 only."""
    times, values = [], []
    running = 0.0
    for f, d, dd in zip(residual.fields, track.delta, track.delta_dot):
        if f.t <= 0:
            continue
        env = _envelope(ctx, f.x, f.t, bar=True)
        v_x = np.gradient(f.values, f.x, axis=0)
        term = (_sup_ratio(f.values, env, floor)
                + _sup_ratio(v_x, f.t**-0.5 * (1 + f.t) ** 0.5 * env, floor)
                + abs(d) * (1 + f.t) ** 0.5 + abs(dd) * (1 + f.t))
        running = max(running, term)
        times.append(f.t)
        values.append(running)
    times, values = np.array(times), np.array(values)
    return RatioSeries(times=times, ratio=values, fallback=not ctx.has_outgoing,
                       slope=_ratio_slope(times, values, fit_t_min, slope_tolerance))


def envelope_consistency(residual: Trajectory, series: RatioSeries, ctx: EnvelopeContext) -> float:
    """max_t | ||v||_inf - (rho(t) sup env) restricted to the arg-max point | gap; zero up to rounding."""
    worst = 0.0
    for f, rho in zip(residual.fields, series.ratio):
        mag = np.linalg.norm(f.values, axis=-1)
        env = _envelope(ctx, f.x, f.t, bar=False)
        worst = max(worst, float(np.max(mag) - rho * np.max(env)))
    return worst


def green_function_report(profile: ShockProfile, ctx: EnvelopeContext, green: Trajectory, y: float,
                          direction: np.ndarray, t_min: float = 1.0) -> dict:
    """Compare a numerical Green's function with the excited term and the unified kernel bound.

    For each snapshot the excited part ū'(x) e(y,t).d is removed, the remainder is projected
    on ū' by least squares, and C_fit = sup |rest| / gtilde_bound(0, x, t, y) is recorded.
    """
    x = green.x
    slope = profile.derivative
    rows = []
    for f in green.fields:
        if f.t < t_min:
            continue
        e = float(excited_row(ctx, np.array([y]), f.t)[0] @ direction)
        rest = f.values - slope * e
        coeff = float(np.sum(rest * slope) / np.sum(slope * slope))
        projected = slope * coeff
        remainder = rest - projected
        mass_rest = float(np.abs(trapezoid(rest, x, axis=0)).sum())
        mass_proj = float(np.abs(trapezoid(projected, x, axis=0)).sum())
        bound = _bound_on_mesh(ctx, x, f.t, y)
        live = bound > ENVELOPE_FLOOR
        mag = np.linalg.norm(remainder, axis=-1)
        c_fit = float(np.max(mag[live] / bound[live])) if np.any(live) else float("nan")
        rows.append({
            "t": float(f.t),
            "excited": e,
            "projection": coeff,
            "projection_share": mass_proj / mass_rest if mass_rest > 0 else 0.0,
            "c_fit": finite_or_none(c_fit),
        })
    c_values = [r["c_fit"] for r in rows if r["c_fit"] is not None]
    return {"y": float(y), "rows": rows, "c_fit": max(c_values) if c_values else None}


def _bound_on_mesh(ctx: EnvelopeContext, x: np.ndarray, t: float, y: float) -> np.ndarray:
    # subsample and interpolate; the bound varies on the scale sqrt(Mt)
    coarse = np.linspace(x[0], x[-1], min(len(x), 2001))
    vals = np.array([gtilde_bound(ctx, "0", xi, t, y) for xi in coarse])
    return np.interp(x, coarse, vals)


def _side_data(ctx: EnvelopeContext, y: float):
    if y <= 0:
        return ctx.speeds_minus, ctx.beta_minus, ctx.left_minus, ctx.right_minus
    return ctx.speeds_plus, ctx.beta_plus, ctx.left_plus, ctx.right_plus


def far_field_time(ctx: EnvelopeContext, y: float, t_max: float, halo: float = 5.0,
                   spreads: float = 5.0) -> Optional[float]:
    """Latest t in [1, t_max] at which every heat kernel convected from y is still ``spreads``
    standard deviations plus ``halo`` away from the shock; None if t = 1 is already too late."""
    speeds, betas, _, _ = _side_data(ctx, y)
    a = float(np.max(np.abs(speeds)))
    beta = float(np.max(betas))

    def room(t):
        return abs(y) - a * t - spreads * np.sqrt(2 * beta * t) - halo

    if t_max < 1.0 or room(1.0) < 0:
        return None
    if room(t_max) >= 0:
        return float(t_max)
    return float(brentq(room, 1.0, t_max))


def heat_kernel_match(ctx: EnvelopeContext, green: Trajectory, y: float, direction: np.ndarray,
                      t: float, width: float) -> float:
    """Relative L1 gap between the numerical G and sum_k r_k l_k.d (4 pi beta_k t)^-1/2 e^{-(x-y-a_k t)^2/4 beta_k t}.

    The comparison kernel is widened by the source variance (heat kernel at t + width^2/2beta).
    """
    f = green.at(t)
    x = f.x
    speeds, betas, lefts, rights = _side_data(ctx, y)
    model = np.zeros_like(f.values)
    for a, beta, l, r in zip(speeds, betas, lefts, rights):
        spread = 4 * beta * f.t + 2 * width**2
        model += ((l @ direction) * np.exp(-((x - y - a * f.t) ** 2) / spread) / np.sqrt(np.pi * spread))[:, None] * r
    num = trapezoid(np.linalg.norm(f.values - model, axis=-1), x)
    den = trapezoid(np.linalg.norm(model, axis=-1), x)
    return float(num / den)
