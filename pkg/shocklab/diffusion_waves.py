"""Self-similar Burgers diffusion waves carried by the outgoing characteristic modes.

Each wave solves

    phi_t + a phi_x - beta phi_xx = -gamma (phi^2)_x,    phi(x, -1) = m delta_0(x).

In the moving frame xi = x - a tau, tau = t + 1 this is Burgers' equation
phi_tau + 2 gamma phi phi_xi = beta phi_xixi, and w = 2 gamma phi turns it into the standard
w_tau + w w_xi = beta w_xixi with a point mass 2 gamma m.  Hopf-Cole, w = -2 beta (log theta)_xi,
with theta solving the heat equation from the step data exp(-(2 beta)^-1 int w_0), gives

    theta = erfc(eta)/2 + exp(-R) erfc(-eta)/2,     eta = xi / sqrt(4 beta tau),  R = gamma m / beta,
    phi   = -(beta/gamma) (log theta)_xi
          = (beta/gamma) (1 - exp(-R)) exp(-eta^2) / (sqrt(4 pi beta tau) theta).

For gamma -> 0 this tends to the heat kernel m (4 pi beta tau)^-1/2 exp(-xi^2 / 4 beta tau).
Using -(beta/gamma) theta_xi/theta = phi, the derivatives close on phi itself:

    phi_xi  = -xi phi / (2 beta tau) + (gamma/beta) phi^2
    phi_tau = -(phi + xi phi_xi) / (2 tau)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import CubicSpline
from scipy.special import erfc

from .errors import NonpositiveBeta, NonpositiveTime
from .systems import EndstateData, Mode, outgoing_modes

log = logging.getLogger(__name__)

WINDOW_STD = 60.0
SOURCE_WIDTH = 0.01
SOURCE_TAU = 0.01


@dataclass(frozen=True, eq=False)
class DiffusionWave:
    mass: float
    speed: float
    beta: float
    gamma: float
    direction: np.ndarray = field(default_factory=lambda: np.ones(1))
    mode: Optional[Mode] = None


@dataclass(frozen=True, eq=False)
class DiffusionWaveSet:
    waves: List[DiffusionWave]
    n: int

    @property
    def masses(self) -> Dict[Mode, float]:
        return {w.mode: w.mass for w in self.waves}


def _frame(w: DiffusionWave, x, t) -> Tuple[np.ndarray, np.ndarray]:
    if w.beta <= 0:
        raise NonpositiveBeta(f"beta must be positive, got {w.beta}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise NonpositiveTime("diffusion waves are evaluated for t >= 0 only")
    tau = t + 1.0
    xi = np.asarray(x, dtype=float) - w.speed * tau
    return xi, tau


def eval_wave(w: DiffusionWave, x, t) -> np.ndarray:
    xi, tau = _frame(w, x, t)
    width = np.sqrt(4.0 * w.beta * tau)
    eta = xi / width
    gauss = np.exp(-(eta**2)) / (np.sqrt(np.pi) * width)
    if w.gamma == 0.0 or w.mass == 0.0:
        return w.mass * gauss
    R = w.gamma * w.mass / w.beta
    theta = 0.5 * erfc(eta) + 0.5 * np.exp(-R) * erfc(-eta)
    return (w.beta / w.gamma) * (-np.expm1(-R)) * gauss / theta


def _xi_derivative(w: DiffusionWave, phi: np.ndarray, xi: np.ndarray, tau: np.ndarray) -> np.ndarray:
    return -xi * phi / (2.0 * w.beta * tau) + (w.gamma / w.beta) * phi**2


def wave_derivatives(w: DiffusionWave, x, t) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (phi_x, phi_t) of the closed form."""
    xi, tau = _frame(w, x, t)
    phi = eval_wave(w, x, t)
    phi_xi = _xi_derivative(w, phi, xi, tau)
    phi_tau = -(phi + xi * phi_xi) / (2.0 * tau)
    return phi_xi, phi_tau - w.speed * phi_xi


def wave_xx(w: DiffusionWave, x, t) -> np.ndarray:
    xi, tau = _frame(w, x, t)
    phi = eval_wave(w, x, t)
    phi_xi = _xi_derivative(w, phi, xi, tau)
    return (-(phi + xi * phi_xi) / (2.0 * w.beta * tau)
            + 2.0 * (w.gamma / w.beta) * phi * phi_xi)


def wave_mass(w: DiffusionWave, t: float, points: int = 24001) -> float:
    """∫phi(x, t) dx over |xi| <= 60 sqrt(beta tau)."""
    tau = t + 1.0
    half = WINDOW_STD * np.sqrt(w.beta * tau)
    x = w.speed * tau + np.linspace(-half, half, points)
    return float(trapezoid(eval_wave(w, x, t), x))


def eval_composite(wave_set: DiffusionWaveSet, x, t) -> np.ndarray:
    shape = np.broadcast(np.asarray(x, dtype=float), np.asarray(t, dtype=float)).shape
    out = np.zeros(shape + (wave_set.n,))
    for w in wave_set.waves:
        out += eval_wave(w, x, t)[..., None] * w.direction
    return out


def composite_derivatives(wave_set: DiffusionWaveSet, x, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(phi_x, phi_t, phi_xx) of the vector ansatz."""
    shape = np.broadcast(np.asarray(x, dtype=float), np.asarray(t, dtype=float)).shape
    dx = np.zeros(shape + (wave_set.n,))
    dt = np.zeros_like(dx)
    dxx = np.zeros_like(dx)
    for w in wave_set.waves:
        px, pt = wave_derivatives(w, x, t)
        dx += px[..., None] * w.direction
        dt += pt[..., None] * w.direction
        dxx += wave_xx(w, x, t)[..., None] * w.direction
    return dx, dt, dxx


def build_wave_set(data_minus: EndstateData, data_plus: EndstateData,
                   masses: Dict[Mode, float]) -> DiffusionWaveSet:
    """One wave per outgoing mode.

    The quadratic term of the perturbation equation is the Taylor coefficient d^2F/2, so a
    wave on mode j is coupled through gamma_j / 2 with gamma_j = l_j . d^2F(r_j, r_j).
    """
    waves = []
    for mode in outgoing_modes(data_minus, data_plus):
        data = data_minus if mode.side == "-" else data_plus
        j = mode.index
        waves.append(DiffusionWave(
            mass=float(masses.get(mode, 0.0)),
            speed=float(data.speeds[j]),
            beta=float(data.beta[j]),
            gamma=0.5 * float(data.gamma[j]),
            direction=data.right[j].copy(),
            mode=mode,
        ))
    unknown = set(masses) - {w.mode for w in waves}
    if unknown:
        raise ValueError(f"masses given for non-outgoing modes: {sorted(unknown)}")
    return DiffusionWaveSet(waves=waves, n=data_minus.n)


def _stencils(u: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    p = np.pad(u, 2)
    d1 = (-p[4:] + 8 * p[3:-1] - 8 * p[1:-3] + p[:-4]) / (12 * h)
    d2 = (-p[4:] + 16 * p[3:-1] - 30 * p[2:-2] + 16 * p[1:-3] - p[:-4]) / (12 * h * h)
    return d1, d2


def integrate_wave_pde(w: DiffusionWave, t_end: float, resolution: float = 1.0 / 16) -> Tuple[np.ndarray, np.ndarray]:
    """Brute-force oracle: method of lines with fourth-order differences in the moving frame.

    Starts from a Gaussian of mass ``w.mass`` and standard deviation ``SOURCE_WIDTH`` centered on
    the ray at tau = ``SOURCE_TAU`` and returns (x, phi(x, t_end)).  The mesh is rebuilt each time
    the heat spread doubles, with spacing ``resolution`` times the spread at the start of the stage.
    """
    tau1 = t_end + 1.0
    if tau1 <= SOURCE_TAU:
        raise NonpositiveTime(f"oracle needs t + 1 > {SOURCE_TAU}, got t = {t_end}")

    def spread(tau):
        return np.sqrt(SOURCE_WIDTH**2 + 2 * w.beta * (tau - SOURCE_TAU))

    def rhs(_, u, h):
        _, d2 = _stencils(u, h)
        dsq, _ = _stencils(u * u, h)
        return w.beta * d2 - w.gamma * dsq

    tau = SOURCE_TAU
    xi, u = None, None
    stages = 0
    while tau < tau1:
        width = spread(tau)
        end = min(tau1, SOURCE_TAU + (4 * width**2 - SOURCE_WIDTH**2) / (2 * w.beta))
        h = resolution * width
        half = 12.0 * spread(end) + 1.0
        grid = np.arange(-half, half + 0.5 * h, h)
        if xi is None:
            u0 = w.mass * np.exp(-grid**2 / (2 * SOURCE_WIDTH**2)) / (np.sqrt(2 * np.pi) * SOURCE_WIDTH)
        else:
            u0 = np.where(np.abs(grid) <= xi[-1], CubicSpline(xi, u)(np.clip(grid, xi[0], xi[-1])), 0.0)
        sol = solve_ivp(rhs, (tau, end), u0, method="RK45", rtol=1e-9, args=(h,),
                        atol=1e-12 * max(1e-300, float(np.max(np.abs(u0)))))
        if not sol.success:
            raise RuntimeError(f"oracle integration failed: {sol.message}")
        xi, u, tau = grid, sol.y[:, -1], end
        stages += 1
    log.debug("oracle: %d stages, %d points on the last mesh", stages, len(xi))
    return xi + w.speed * tau1, u


def oracle_error(w: DiffusionWave, t: float, resolution: float = 1.0 / 16) -> float:
    """Relative sup-norm gap between the closed form and ``integrate_wave_pde`` at time t."""
    x, numeric = integrate_wave_pde(w, t, resolution=resolution)
    exact = eval_wave(w, x, t)
    return float(np.max(np.abs(numeric - exact)) / np.max(np.abs(exact)))
