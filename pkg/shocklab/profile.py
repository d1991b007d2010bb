from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import CubicSpline
from scipy.stats import linregress

from .errors import DomainTooSmall, NoConnection, ShiftOutOfRange, TailAtNoiseFloor
from .systems import SystemModel, classify_shock, endstate_data

log = logging.getLogger(__name__)

SHOOT_OFFSET = 1e-7
TAIL_NOISE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ShockProfile:
    """Standing viscous shock sampled on a uniform mesh.

    ``values[i]`` is ū(x_i) and ``derivative[i]`` is ū'(x_i); the first component crosses
    the midpoint of its endstates at x = 0.
    """

    x: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray
    decay_rate: float = float("nan")
    residual: float = float("nan")

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def halfwidth(self) -> float:
        return float(min(-self.x[0], self.x[-1]))

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.x, self.values, axis=0)

    def evaluate(self, y) -> np.ndarray:
        """ū at arbitrary points; endstates outside the mesh."""
        y = np.asarray(y, dtype=float)
        inside = self._spline(np.clip(y, self.x[0], self.x[-1]))
        out = np.where((y < self.x[0])[..., None], self.u_minus, inside)
        return np.where((y > self.x[-1])[..., None], self.u_plus, out)

    def slope(self, y) -> np.ndarray:
        """ū' at arbitrary points; zero outside the mesh."""
        y = np.asarray(y, dtype=float)
        inside = self._spline(np.clip(y, self.x[0], self.x[-1]), 1)
        return np.where(((y < self.x[0]) | (y > self.x[-1]))[..., None], 0.0, inside)

    def shifted(self, delta: float) -> np.ndarray:
        """ū^δ(x_i) = ū(x_i + δ) by cubic interpolation."""
        if abs(delta) >= self.halfwidth / 10:
            raise ShiftOutOfRange(f"|delta|={abs(delta):.4g} must stay below X/10={self.halfwidth / 10:.4g}")
        if delta == 0:
            return self.values.copy()
        return self.evaluate(self.x + delta)

    def export_csv(self, path: str) -> None:
        cols = ["x"] + [f"u{k + 1}" for k in range(self.n)] + [f"du{k + 1}" for k in range(self.n)]
        np.savetxt(
            path,
            np.column_stack([self.x, self.values, self.derivative]),
            delimiter=",",
            header=",".join(cols),
            comments="",
        )


def profile_shift(profile: ShockProfile, delta: float) -> np.ndarray:
    return profile.shifted(delta)


def uniform_mesh(halfwidth: float, points: int) -> np.ndarray:
    return np.linspace(-halfwidth, halfwidth, points)


def _rhs_field(model: SystemModel, sign: float):
    B_inv = np.linalg.inv(model.viscosity(model.u_minus))

    def g(u: np.ndarray) -> np.ndarray:
        return sign * (B_inv @ model.profile_rhs(u))

    def dg(u: np.ndarray) -> np.ndarray:
        return sign * (B_inv @ model.frame_jacobian(u))

    return g, dg


def _orientation(model: SystemModel) -> Tuple[float, np.ndarray, np.ndarray]:
    """Pick the side whose rest point has a one-dimensional unstable manifold.

    Returns (sign, rest, target): the orbit is followed in xi = sign * x, leaving ``rest``.
    """
    dm, dp = endstate_data(model, "-"), endstate_data(model, "+")
    kind, excess = classify_shock(dm, dp)
    if kind != "lax":
        raise NoConnection(f"only Lax connections are supported, got {kind} (i - n = {excess})")
    B_inv = np.linalg.inv(model.viscosity(model.u_minus))
    unstable_minus = int(np.sum(np.linalg.eigvals(B_inv @ model.frame_jacobian(model.u_minus)).real > 0))
    stable_plus = int(np.sum(np.linalg.eigvals(B_inv @ model.frame_jacobian(model.u_plus)).real < 0))
    if unstable_minus == 1:
        return 1.0, model.u_minus, model.u_plus
    if stable_plus == 1:
        log.debug("shooting backward from u+ (unstable dimension at u- is %d)", unstable_minus)
        return -1.0, model.u_plus, model.u_minus
    raise NoConnection(
        f"no one-dimensional manifold to shoot along (dim W^u(u-)={unstable_minus}, dim W^s(u+)={stable_plus})"
    )


def _unstable_direction(dg, rest: np.ndarray, target: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    eigvals, eigvecs = np.linalg.eig(dg(rest))
    k = int(np.argmax(eigvals.real))
    lam = float(eigvals[k].real)
    r = eigvecs[:, k].real
    r = r / np.linalg.norm(r)
    toward = np.sign(r[0] * (target[0] - rest[0])) or 1.0
    return lam, [toward * r, -toward * r]


def solve_profile(model: SystemModel, halfwidth: float = 40.0, points: int = 8001) -> ShockProfile:
    sign, rest, target = _orientation(model)
    g, dg = _rhs_field(model, sign)
    lam, directions = _unstable_direction(dg, rest, target)
    jump = float(np.linalg.norm(target - rest))
    eps = SHOOT_OFFSET * jump
    mid = 0.5 * (model.u_minus[0] + model.u_plus[0])
    span = 60.0 / lam + 4 * halfwidth

    def crossing(_, w):
        return w[0] - mid
    crossing.terminal = True

    def escape(_, w):
        return 10 * jump + 10 - np.linalg.norm(w - rest)
    escape.terminal = True

    x = uniform_mesh(halfwidth, points)
    scale = max(1.0, float(np.max(np.abs(target))))
    failures = []
    for r in directions:
        w0 = rest + eps * r
        head = solve_ivp(lambda _, w: g(w), (0.0, span), w0, method="DOP853", rtol=1e-12,
                         atol=1e-14 * scale, dense_output=True, events=[crossing, escape])
        if head.status != 1 or len(head.t_events[0]) == 0:
            failures.append("no midpoint crossing")
            continue
        xi_c = float(head.t_events[0][0])
        tail = solve_ivp(lambda _, w: g(w), (xi_c, xi_c + halfwidth), head.y_events[0][0], method="DOP853",
                         rtol=1e-12, atol=1e-14 * scale, dense_output=True)
        end_gap = float(np.linalg.norm(tail.y[:, -1] - target))
        if not tail.success or end_gap > 1e-3 * jump:
            failures.append(f"orbit misses the target endstate (gap {end_gap:.3g})")
            continue
        if end_gap > 1e-8 * scale:
            raise DomainTooSmall(f"|u(X) - target| = {end_gap:.3g} at X={halfwidth}; enlarge the domain")

        xi = xi_c + sign * x
        values = np.empty((points, model.n))
        lin = xi < 0
        values[lin] = rest + eps * np.exp(lam * xi[lin])[:, None] * r
        mid_part = (xi >= 0) & (xi <= xi_c)
        if np.any(mid_part):
            values[mid_part] = head.sol(xi[mid_part]).T
        far = xi > xi_c
        values[far] = tail.sol(xi[far]).T
        log.debug("shooting hit the midpoint at xi=%.6f (lambda=%.6f)", xi_c, lam)
        return _finish_profile(model, x, values)

    raise NoConnection("shooting along the unstable manifold failed: " + "; ".join(failures))


def _derivative(model: SystemModel, values: np.ndarray) -> np.ndarray:
    B = model.viscosity(values)
    return np.linalg.solve(B, model.profile_rhs(values)[..., None])[..., 0]


def ode_residual(model: SystemModel, x: np.ndarray, values: np.ndarray) -> float:
    """Sup of B ū' - f(ū) on the interior, with ū' from fourth-order centered differences."""
    h = x[1] - x[0]
    d = (-values[4:] + 8 * values[3:-1] - 8 * values[1:-3] + values[:-4]) / (12 * h)
    inner = values[2:-2]
    B = model.viscosity(inner)
    res = np.einsum("...ij,...j->...i", B, d) - model.profile_rhs(inner)
    return float(np.max(np.abs(res)))


def _finish_profile(model: SystemModel, x: np.ndarray, values: np.ndarray) -> ShockProfile:
    profile = ShockProfile(
        x=x,
        values=values,
        derivative=_derivative(model, values),
        u_minus=np.asarray(model.u_minus, dtype=float),
        u_plus=np.asarray(model.u_plus, dtype=float),
        residual=ode_residual(model, x, values),
    )
    rate = fit_decay_rate(profile)
    halfwidth = profile.halfwidth
    if np.exp(-rate * halfwidth) >= 1e-8:
        raise DomainTooSmall(
            f"fitted decay rate {rate:.4f} gives e^(-alpha X) = {np.exp(-rate * halfwidth):.3g} at X={halfwidth}"
        )
    log.info("profile solved on [%g, %g] with %d points: alpha=%.4f residual=%.2e",
             x[0], x[-1], len(x), rate, profile.residual)
    return replace(profile, decay_rate=rate)


def fit_decay_rate(profile: ShockProfile, noise_floor: float = TAIL_NOISE_FLOOR) -> float:
    """Slowest exponential tail rate, fitted on the outer quarter of the resolved tail on each side."""
    x = profile.x
    rates = []
    for on_side, end in ((x < 0, profile.u_minus), (x > 0, profile.u_plus)):
        dev = np.linalg.norm(profile.values - end, axis=1)
        resolved = on_side & (dev > noise_floor * max(1.0, float(np.max(np.abs(end)))))
        if np.count_nonzero(resolved) < 8:
            raise TailAtNoiseFloor("tail deviation is at the noise floor; nothing to fit")
        reach = float(np.max(np.abs(x[resolved])))
        window = resolved & (np.abs(x) >= 0.75 * reach)
        if np.count_nonzero(window) < 8:
            window = resolved & (np.abs(x) >= 0.5 * reach)
        if np.count_nonzero(window) < 8:
            raise TailAtNoiseFloor(f"only {np.count_nonzero(window)} resolved tail samples")
        fit = linregress(np.abs(x[window]), np.log(dev[window]))
        if not fit.slope < 0:
            raise TailAtNoiseFloor(f"tail does not decay (slope {fit.slope:.3g})")
        rates.append(-fit.slope)
    return float(min(rates))


def connection_mass(profile: ShockProfile) -> np.ndarray:
    """∫ū' dx, which equals u+ - u- for a resolved connection."""
    return trapezoid(profile.derivative, profile.x, axis=0)


def frozen_coefficient_ratio(model: SystemModel, profile: ShockProfile, eta: Optional[float] = None) -> float:
    """sup |A(x) - A±| e^{eta |x|}; finite when coefficients freeze exponentially."""
    eta = profile.decay_rate if eta is None else eta
    A = model.frame_jacobian(profile.values)
    A_end = np.where((profile.x < 0)[:, None, None], model.frame_jacobian(profile.u_minus),
                     model.frame_jacobian(profile.u_plus))
    gap = np.max(np.abs(A - A_end), axis=(1, 2))
    return float(np.max(gap * np.exp(eta * np.abs(profile.x))))


# Discrete steady states of the evolution scheme.
#
# With interface flux (f(U_i) + f(U_{i+1}))/2 - B (U_{i+1} - U_i)/h the stationary states are
# exactly the trapezoid-rule orbits  B (U_{i+1} - U_i)/h = (f(U_i) + f(U_{i+1}))/2  of the
# profile ODE.  They form a one-parameter family indexed by the amplitude of the orbit on the
# unstable manifold, which plays the role of the translation δ.


@dataclass(frozen=True, eq=False)
class DiscreteShockProfile(ShockProfile):
    model: Optional[SystemModel] = None
    log_amplitude: float = 0.0
    delta: float = 0.0

    def translate(self, delta: float) -> "DiscreteShockProfile":
        """Exact member ū_h^{δ+delta} of the discrete family (no interpolation)."""
        return _discrete_member(self.model, self.x, self.log_amplitude, self.delta + delta, self.decay_rate)


def _trapezoid_step(g, dg, w: np.ndarray, h: float, tol: float) -> np.ndarray:
    gw = g(w)
    nxt = w + h * gw
    eye = np.eye(len(w))
    for _ in range(20):
        res = nxt - w - 0.5 * h * (gw + g(nxt))
        step = np.linalg.solve(eye - 0.5 * h * dg(nxt), res)
        nxt = nxt - step
        if np.max(np.abs(step)) <= tol:
            break
    return nxt


def _march(model: SystemModel, x: np.ndarray, log_amplitude: float, delta: float):
    sign, rest, target = _orientation(model)
    g, dg = _rhs_field(model, sign)
    lam, directions = _unstable_direction(dg, rest, target)
    h = float(x[1] - x[0])
    if lam * h >= 2:
        raise NoConnection(f"mesh spacing {h} too coarse for the unstable rate {lam:.4f}")
    log_mu = np.log((1 + 0.5 * lam * h) / (1 - 0.5 * lam * h))
    jump = float(np.linalg.norm(target - rest))
    scale = max(1.0, float(np.max(np.abs(target))))
    start_level = np.log(SHOOT_OFFSET * jump)
    n_pts = len(x)
    k = np.arange(n_pts)
    levels = log_amplitude + (k + sign * delta / h) * log_mu
    linear = levels <= start_level
    if not linear[0]:
        raise DomainTooSmall("the evolution mesh does not reach the linear tail of the profile")
    k0 = int(np.flatnonzero(linear)[-1])

    r = directions[0]
    orbit = np.empty((n_pts, model.n))
    orbit[: k0 + 1] = rest + np.exp(levels[: k0 + 1])[:, None] * r
    tol = 1e-14 * scale
    k_fill = n_pts
    for kk in range(k0 + 1, n_pts):
        orbit[kk] = _trapezoid_step(g, dg, orbit[kk - 1], h, tol)
        gap = np.max(np.abs(orbit[kk] - target))
        if gap <= 1e-14 * scale:
            k_fill = kk + 1
            break
        if np.linalg.norm(orbit[kk] - rest) > 10 * jump + 10:
            raise NoConnection("trapezoid orbit escapes instead of connecting the endstates")
    orbit[k_fill:] = target
    if np.max(np.abs(orbit[-1] - target)) > 1e-8 * scale:
        raise DomainTooSmall("trapezoid orbit has not reached the far endstate at the mesh edge")
    if sign < 0:
        orbit = orbit[::-1]
    return orbit, log_mu, sign


def _crossing(x: np.ndarray, first: np.ndarray, mid: float) -> float:
    s = first - mid
    idx = np.flatnonzero(np.sign(s[:-1]) != np.sign(s[1:]))
    if len(idx) == 0:
        raise NoConnection("discrete orbit never crosses its midpoint")
    i = int(idx[0])
    lo, hi = max(0, i - 3), min(len(x), i + 5)
    roots = CubicSpline(x[lo:hi], s[lo:hi]).roots(extrapolate=False)
    roots = roots[(roots >= x[i]) & (roots <= x[i + 1])]
    return float(roots[0]) if len(roots) else float(x[i] - s[i] * (x[i + 1] - x[i]) / (s[i + 1] - s[i]))


def _discrete_member(model: SystemModel, x: np.ndarray, log_amplitude: float, delta: float,
                     decay_rate: float, eps: float = 1e-5) -> DiscreteShockProfile:
    values, _, _ = _march(model, x, log_amplitude, delta)
    plus, _, _ = _march(model, x, log_amplitude, delta + eps)
    minus, _, _ = _march(model, x, log_amplitude, delta - eps)
    return DiscreteShockProfile(
        x=x,
        values=values,
        derivative=(plus - minus) / (2 * eps),
        u_minus=np.asarray(model.u_minus, dtype=float),
        u_plus=np.asarray(model.u_plus, dtype=float),
        decay_rate=decay_rate,
        residual=0.0,
        model=model,
        log_amplitude=log_amplitude,
        delta=delta,
    )


def discrete_profile(model: SystemModel, x: np.ndarray, delta: float = 0.0) -> DiscreteShockProfile:
    """Steady state of the evolution scheme on mesh ``x``, centered like ``solve_profile``, shifted by ``delta``."""
    h = float(x[1] - x[0])
    if np.max(np.abs(np.diff(x) - h)) > 1e-9 * abs(h):
        raise ValueError("discrete profiles need a uniform mesh")
    sign, rest, target = _orientation(model)
    g, dg = _rhs_field(model, sign)
    lam, _ = _unstable_direction(dg, rest, target)
    log_mu = np.log((1 + 0.5 * lam * h) / (1 - 0.5 * lam * h))
    mid = 0.5 * (model.u_minus[0] + model.u_plus[0])
    jump = float(np.linalg.norm(target - rest))

    # orientation index of x = 0, then a linear guess for the amplitude there
    k_zero = (-x[0] / h) if sign > 0 else (x[-1] / h)
    log_amplitude = np.log(0.5 * jump) - k_zero * log_mu
    for it in range(12):
        values, _, _ = _march(model, x, log_amplitude, 0.0)
        miss = _crossing(x, values[:, 0], mid)
        log.debug("discrete centering iteration %d: crossing at %.3e", it, miss)
        if abs(miss) < 1e-10:
            break
        log_amplitude += sign * (miss / h) * log_mu
    else:
        raise NoConnection(f"could not center the discrete profile (crossing at {miss:.3g})")

    trial = ShockProfile(x=x, values=values, derivative=np.zeros_like(values),
                         u_minus=np.asarray(model.u_minus, dtype=float), u_plus=np.asarray(model.u_plus, dtype=float))
    rate = fit_decay_rate(trial)
    return _discrete_member(model, x, log_amplitude, delta, rate)
