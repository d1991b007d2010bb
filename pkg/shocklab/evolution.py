"""Semi-implicit finite-volume evolution of the shock-frame system and its linearization.

One step of size dt advances interior nodes by

    (I - dt/2 D) U^{k+1} = (I + dt/2 D) U^k - dt/h (C_{i+1/2} - C_{i-1/2})

where D is the constant-viscosity second difference B (U_{i+1} - 2U_i + U_{i-1})/h^2 and C is
the convective interface flux of F - sU.  The two end nodes are pinned (Dirichlet).  The default
flux is local Lax-Friedrichs on an unlimited MUSCL reconstruction; its steady states come from
``steady_state``, which Newton-corrects the trapezoid orbits of ``profile.discrete_profile``.  With
the central flux C = (f(U_i) + f(U_{i+1}))/2 those orbits are already exactly steady.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import trapezoid
from scipy.sparse.linalg import factorized, spsolve

from .errors import BlowUp, CflViolation, ConfigError, NoConvergence
from .profile import DiscreteShockProfile, ShockProfile, discrete_profile
from .systems import SystemModel, endstate_data, make_heat
from .utils import geometric_times, write_csv

log = logging.getLogger(__name__)

CFL = 0.4
BLOWUP_FACTOR = 10.0
FLUXES = ("llf", "central")
STEADY_ITERATIONS = 20
STEADY_TOL = 1e-12
FD_STEP = 1e-7


@dataclass(frozen=True, eq=False)
class GridField:
    x: np.ndarray
    values: np.ndarray
    t: float = 0.0

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Snapshots of one run; ``mass[k]`` is ∫(values - reference) dx at ``times[k]``."""

    times: np.ndarray
    fields: List[GridField]
    mass: np.ndarray
    reference: np.ndarray
    label: str = ""
    meta: Dict[str, float] = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.fields[0].x

    def at(self, t: float) -> GridField:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.fields[k]

    def perturbations(self) -> np.ndarray:
        """(K, N, n) array of values - reference."""
        return np.stack([f.values - self.reference for f in self.fields])


def evolution_mesh(model: SystemModel, halfwidth: float, spacing: float, t_end: float,
                   auto_extend: bool = True, margin: float = 8.0) -> np.ndarray:
    """Uniform mesh through x = 0 wide enough that outgoing signals never reach the ends."""
    left, right = halfwidth, halfwidth
    if auto_extend:
        dm, dp = endstate_data(model, "-"), endstate_data(model, "+")
        beta_max = float(max(np.max(dm.beta), np.max(dp.beta)))
        diffusion = margin * np.sqrt(4 * beta_max * (t_end + 1))
        out_left = float(np.max(-dm.speeds[dm.speeds < 0], initial=0.0))
        out_right = float(np.max(dp.speeds[dp.speeds > 0], initial=0.0))
        left = halfwidth + out_left * t_end + diffusion
        right = halfwidth + out_right * t_end + diffusion
        log.info("evolution domain extended to [%.1f, %.1f] for t_end=%g", -left, right, t_end)
    k_left = int(np.ceil(left / spacing))
    k_right = int(np.ceil(right / spacing))
    return spacing * np.arange(-k_left, k_right + 1, dtype=float)


def max_speed(model: SystemModel, values: np.ndarray) -> float:
    eig = np.linalg.eigvals(model.frame_jacobian(values))
    return float(np.max(np.abs(eig)))


def stable_dt(model: SystemModel, values: np.ndarray, spacing: float) -> float:
    return CFL * spacing / max(max_speed(model, values), 1e-12)


def check_dt(model: SystemModel, values: np.ndarray, spacing: float, dt: float) -> None:
    amax = max_speed(model, values)
    if dt > CFL * spacing / max(amax, 1e-12) * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.4g} exceeds {CFL}*h/max|a| = {CFL * spacing / amax:.4g}")
    beta_min = float(np.min(np.linalg.eigvals(model.viscosity(values[:1])[0]).real))
    if amax > 0 and dt > 2 * beta_min / amax**2:
        raise CflViolation(f"dt={dt:.4g} exceeds the convection-diffusion bound 2*beta/a^2 = {2 * beta_min / amax**2:.4g}")


def _constant_viscosity(model: SystemModel) -> np.ndarray:
    B = model.viscosity(model.u_minus)
    if not np.allclose(B, model.viscosity(model.u_plus)):
        raise ConfigError(f"the evolution scheme needs a constant viscosity matrix ({model.name})")
    return B


class _DiffusionSolver:
    """Crank-Nicolson diffusion matrices on the full node set, factorized once per dt."""

    def __init__(self, n_nodes: int, B: np.ndarray, spacing: float):
        T = sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n_nodes, n_nodes), format="lil")
        T[0, :] = 0.0
        T[n_nodes - 1, :] = 0.0
        self.operator = sparse.kron(T.tocsr(), sparse.csr_matrix(B), format="csc") / spacing**2
        self.eye = sparse.identity(self.operator.shape[0], format="csc")
        self._cache: Dict[float, tuple] = {}

    def __call__(self, dt: float):
        key = round(dt, 15)
        if key not in self._cache:
            solve = factorized((self.eye - 0.5 * dt * self.operator).tocsc())
            explicit = (self.eye + 0.5 * dt * self.operator).tocsr()
            self._cache[key] = (solve, explicit)
            log.debug("factorized diffusion step for dt=%.6g (%d cached)", dt, len(self._cache))
        return self._cache[key]


def _central_flux(fu: np.ndarray) -> np.ndarray:
    return 0.5 * (fu[:-1] + fu[1:])


def _llf_flux(model: SystemModel, flux: Callable, u: np.ndarray) -> np.ndarray:
    # unlimited MUSCL reconstruction with the end values repeated as ghosts
    p = np.concatenate([u[:1], u, u[-1:]])
    left = p[1:-2] + 0.25 * (p[2:-1] - p[:-3])
    right = p[2:-1] - 0.25 * (p[3:] - p[1:-2])
    lam = np.maximum(
        np.max(np.abs(np.linalg.eigvals(model.frame_jacobian(left))), axis=-1),
        np.max(np.abs(np.linalg.eigvals(model.frame_jacobian(right))), axis=-1),
    )
    return 0.5 * (flux(left) + flux(right)) - 0.5 * lam[:, None] * (right - left)


# Steady states of the LLF scheme.
#
# The reconstruction shifts the interface average by O(h^2), so a trapezoid orbit is not steady
# under LLF.  Each member is the trapezoid member at the same δ corrected by Newton on the
# interior equations D U = div C, bordered with the phase condition <ū_h', U - ū_h> = 0 that
# fixes the position along the one-parameter family.


class LlfShockProfile(DiscreteShockProfile):
    """Steady state of the LLF scheme; ``residual`` is max |D U - div C| after the correction."""

    def translate(self, delta: float) -> "LlfShockProfile":
        return llf_steady_state(DiscreteShockProfile.translate(self, delta))


def _steady_residual(model: SystemModel, operator, u: np.ndarray, h: float) -> np.ndarray:
    cflux = _llf_flux(model, model.frame_flux, u)
    div = np.zeros_like(u)
    div[1:-1] = (cflux[1:] - cflux[:-1]) / h
    return (operator @ u.reshape(-1)).reshape(u.shape) - div


def _interior_jacobian(model: SystemModel, operator, u: np.ndarray, h: float, eps: float):
    """Residual and its interior Jacobian by differences, five node colors (stencil radius 2)."""
    n_nodes, n = u.shape
    base = _steady_residual(model, operator, u, h)
    nodes = np.arange(1, n_nodes - 1)
    rows, cols, data = [], [], []
    for color in range(5):
        hit = nodes[nodes % 5 == color]
        for k in range(n):
            bumped = u.copy()
            bumped[hit, k] += eps
            change = (_steady_residual(model, operator, bumped, h) - base) / eps
            for offset in range(-2, 3):
                i = hit + offset
                keep = (i >= 1) & (i <= n_nodes - 2)
                rows.append(((i[keep] - 1)[:, None] * n + np.arange(n)).ravel())
                cols.append(np.repeat((hit[keep] - 1) * n + k, n))
                data.append(change[i[keep]].ravel())
    size = (n_nodes - 2) * n
    jac = sparse.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(size, size))
    return base, jac


def llf_steady_state(central: DiscreteShockProfile) -> LlfShockProfile:
    """Correct a trapezoid member to a steady state of the LLF scheme on the same mesh."""
    model, x = central.model, central.x
    h = float(x[1] - x[0])
    n_nodes, n = central.values.shape
    operator = _DiffusionSolver(n_nodes, _constant_viscosity(model), h).operator
    scale = max(1.0, float(np.max(np.abs(central.values))))
    tangent = central.derivative[1:-1].reshape(-1)
    border = sparse.csc_matrix(tangent[:, None])
    anchor = central.values[1:-1].reshape(-1)

    u = central.values.astype(float).copy()
    sigma = 0.0
    for it in range(STEADY_ITERATIONS):
        res, jac = _interior_jacobian(model, operator, u, h, FD_STEP * scale)
        system = sparse.bmat([[jac, border], [border.T, None]], format="csc")
        rhs = np.concatenate([res[1:-1].reshape(-1) + sigma * tangent, [tangent @ (u[1:-1].reshape(-1) - anchor)]])
        step = spsolve(system, -rhs)
        u[1:-1] += step[:-1].reshape(n_nodes - 2, n)
        sigma += float(step[-1])
        size = float(np.max(np.abs(step[:-1])))
        log.debug("LLF steady state iteration %d: step %.3e, border %.3e", it, size, sigma)
        if size <= STEADY_TOL * scale:
            break
    else:
        raise NoConvergence(f"LLF steady state did not converge in {STEADY_ITERATIONS} iterations (last step {size:.3g})")

    # tangent to the family, normalized like the trapezoid derivative
    load = np.zeros(len(tangent) + 1)
    load[-1] = tangent @ tangent
    derivative = np.zeros_like(u)
    derivative[1:-1] = spsolve(system, load)[:-1].reshape(n_nodes - 2, n)
    residual = float(np.max(np.abs(_steady_residual(model, operator, u, h))))
    log.debug("LLF steady state at delta=%.4g: residual %.3e after %d iterations", central.delta, residual, it + 1)
    return LlfShockProfile(
        x=x,
        values=u,
        derivative=derivative,
        u_minus=central.u_minus,
        u_plus=central.u_plus,
        decay_rate=central.decay_rate,
        residual=residual,
        model=model,
        log_amplitude=central.log_amplitude,
        delta=central.delta,
    )


def steady_state(model: SystemModel, x: np.ndarray, flux: str = "llf", delta: float = 0.0) -> DiscreteShockProfile:
    """Steady state of the evolution scheme with convective ``flux``, centered like ``discrete_profile``."""
    if flux not in FLUXES:
        raise ConfigError(f"unknown numerical flux {flux!r}; expected one of {FLUXES}")
    central = discrete_profile(model, x, delta)
    return central if flux == "central" else llf_steady_state(central)


def _integrate(x: np.ndarray, u0: np.ndarray, convective: Callable, B: np.ndarray, t_end: float,
               dt: float, snapshots: Sequence[float], reference: np.ndarray, limit: float,
               label: str) -> Trajectory:
    h = float(x[1] - x[0])
    n_nodes, n = u0.shape
    solver = _DiffusionSolver(n_nodes, B, h)
    u = u0.copy()
    t = 0.0
    fields, times, masses = [], [], []

    def record():
        fields.append(GridField(x=x, values=u.copy(), t=t))
        times.append(t)
        masses.append(trapezoid(u - reference, x, axis=0))

    targets = sorted(set(float(s) for s in snapshots if 0 < s <= t_end + 1e-12))
    record()
    steps = 0
    for target in targets:
        while t < target - 1e-12:
            step = min(dt, target - t)
            solve, explicit = solver(step)
            div = np.zeros_like(u)
            cflux = convective(u)
            div[1:-1] = (cflux[1:] - cflux[:-1]) / h
            rhs = explicit @ u.reshape(-1) - step * div.reshape(-1)
            u = solve(rhs).reshape(n_nodes, n)
            t = target if step < dt else t + step
            steps += 1
            if steps % 200 == 0 and not (np.all(np.isfinite(u)) and np.max(np.abs(u)) <= limit):
                raise BlowUp(f"{label}: solution left the admissible range at t={t:.4g}")
        if not (np.all(np.isfinite(u)) and np.max(np.abs(u)) <= limit):
            raise BlowUp(f"{label}: solution left the admissible range at t={t:.4g}")
        record()
        log.debug("%s: snapshot t=%.4g after %d steps", label, t, steps)
    log.info("%s: %d steps to t=%g (%d snapshots, %d nodes)", label, steps, t, len(times), n_nodes)
    return Trajectory(
        times=np.array(times),
        fields=fields,
        mass=np.array(masses),
        reference=reference,
        label=label,
        meta={"dt": dt, "spacing": h, "steps": steps},
    )


def _snapshots(t_end: float, snapshot_base: float, times: Optional[Sequence[float]]) -> List[float]:
    if times is not None:
        return list(times)
    return list(geometric_times(t_end, snapshot_base)) + [t_end]


def _prepare(model: SystemModel, initial: GridField, dt: Optional[float], flux: str, coeffs: np.ndarray) -> float:
    if flux not in FLUXES:
        raise ConfigError(f"unknown numerical flux {flux!r}; expected one of {FLUXES}")
    h = initial.spacing
    if np.max(np.abs(np.diff(initial.x) - h)) > 1e-9 * abs(h):
        raise ConfigError("the evolution mesh must be uniform")
    if dt is None:
        dt = stable_dt(model, coeffs, h)
    check_dt(model, coeffs, h, dt)
    return dt


def evolve_nonlinear(model: SystemModel, profile: ShockProfile, initial: GridField, t_end: float,
                     dt: Optional[float] = None, flux: str = "llf", snapshot_base: float = 2**0.5,
                     times: Optional[Sequence[float]] = None) -> Trajectory:
    """Evolve u_t + (F(u) - s u)_x = (B u_x)_x from ``initial``; the end nodes stay at u-/u+.

    ``profile`` supplies the reference for the mass record; it must live on the same mesh or be
    evaluable there.
    """
    dt = _prepare(model, initial, dt, flux, initial.values)
    x = initial.x
    reference = profile.values if len(profile.x) == len(x) and np.allclose(profile.x, x) else profile.evaluate(x)
    u0 = initial.values.astype(float).copy()
    u0[0], u0[-1] = model.u_minus, model.u_plus
    jump = float(np.max(np.abs(model.u_plus - model.u_minus)))
    limit = BLOWUP_FACTOR * max(jump, float(np.max(np.abs(u0))), 1e-300)

    if flux == "central":
        def convective(u):
            return _central_flux(model.frame_flux(u))
    else:
        def convective(u):
            return _llf_flux(model, model.frame_flux, u)

    return _integrate(x, u0, convective, _constant_viscosity(model), t_end, dt,
                      _snapshots(t_end, snapshot_base, times), reference, limit, "nonlinear")


def evolve_linearized(model: SystemModel, profile: ShockProfile, initial: GridField, t_end: float,
                      dt: Optional[float] = None, snapshot_base: float = 2**0.5,
                      times: Optional[Sequence[float]] = None, label: str = "linearized") -> Trajectory:
    """Evolve v_t = -(A(x) v)_x + (B v_x)_x with A(x) = dF(ū(x)) - sI frozen along ``profile``."""
    x = initial.x
    values = profile.values if len(profile.x) == len(x) and np.allclose(profile.x, x) else profile.evaluate(x)
    dt = _prepare(model, initial, dt, "central", values)
    A = model.frame_jacobian(values)
    v0 = initial.values.astype(float).copy()
    v0[0] = 0.0
    v0[-1] = 0.0
    limit = BLOWUP_FACTOR * max(float(np.max(np.abs(v0))), 1e-300)

    def convective(v):
        return _central_flux(np.einsum("ijk,ik->ij", A, v))

    return _integrate(x, v0, convective, _constant_viscosity(model), t_end, dt,
                      _snapshots(t_end, snapshot_base, times), np.zeros_like(v0), limit, label)


def gaussian(x: np.ndarray, center: float, width: float, mass: float = 1.0) -> np.ndarray:
    return mass * np.exp(-((x - center) ** 2) / (2 * width**2)) / (np.sqrt(2 * np.pi) * width)


def green_function_approx(model: SystemModel, profile: ShockProfile, y: float, width: float, t_end: float,
                          x: Optional[np.ndarray] = None, direction: Optional[np.ndarray] = None,
                          dt: Optional[float] = None, times: Optional[Sequence[float]] = None) -> Trajectory:
    """Linearized evolution of a unit-mass Gaussian of standard deviation ``width`` at y."""
    x = profile.x if x is None else x
    h = float(x[1] - x[0])
    if width < 3 * h:
        raise ConfigError(f"source width {width} must be at least 3h = {3 * h}")
    direction = np.eye(model.n)[0] if direction is None else np.asarray(direction, dtype=float)
    initial = GridField(x=x, values=gaussian(x, y, width)[:, None] * direction)
    return evolve_linearized(model, profile, initial, t_end, dt=dt, times=times, label=f"green(y={y:g})")


def heat_benchmark_error(spacing: float, dt: float, t_end: float = 1.0, halfwidth: float = 20.0,
                         width: float = 1.0) -> float:
    """L-infinity error of the scheme on u_t = u_xx against the spreading Gaussian."""
    model = make_heat()
    k = int(round(halfwidth / spacing))
    x = spacing * np.arange(-k, k + 1, dtype=float)
    u0 = gaussian(x, 0.0, width)[:, None]
    traj = _integrate(x, u0, lambda u: np.zeros((len(u) - 1, 1)), _constant_viscosity(model),
                      t_end, dt, [t_end], np.zeros_like(u0), 1e300, "heat")
    exact = gaussian(x, 0.0, np.sqrt(width**2 + 2 * t_end))
    return float(np.max(np.abs(traj.fields[-1].values[:, 0] - exact)))


def linearization_gap(model: SystemModel, profile: ShockProfile, shape: np.ndarray, eps_list: Sequence[float],
                      t: float, dt: Optional[float] = None) -> Dict[float, float]:
    """sup_x |nonlinear(ū + eps p) - ū - linear(eps p)| at time t for each eps.

    Both runs use the central flux, so ``profile`` should be a trapezoid member.
    """
    x = profile.x
    gaps = {}
    for eps in eps_list:
        pert = eps * np.asarray(shape, dtype=float)
        nonlinear = evolve_nonlinear(model, profile, GridField(x=x, values=profile.values + pert), t, dt=dt,
                                     flux="central", times=[t])
        linear = evolve_linearized(model, profile, GridField(x=x, values=pert), t, dt=dt, times=[t])
        gap = nonlinear.fields[-1].values - profile.values - linear.fields[-1].values
        gaps[float(eps)] = float(np.max(np.abs(gap)))
        log.info("linearization gap at eps=%.0e: %.3e", eps, gaps[float(eps)])
    return gaps


def export_trajectory(traj: Trajectory, directory: str, prefix: str) -> List[str]:
    """One CSV per snapshot plus ``<prefix>.json`` with times, mesh metadata and the mass record."""
    os.makedirs(directory, exist_ok=True)
    n = traj.fields[0].values.shape[1]
    paths = []
    for k, f in enumerate(traj.fields):
        path = os.path.join(directory, f"{prefix}_{k:03d}.csv")
        write_csv(path, ["x"] + [f"u{c + 1}" for c in range(n)], np.column_stack([f.x, f.values]))
        paths.append(path)
    meta = {
        "label": traj.label,
        "times": [float(t) for t in traj.times],
        "mesh": {"x_min": float(traj.x[0]), "x_max": float(traj.x[-1]), "points": int(len(traj.x)),
                 "spacing": float(traj.x[1] - traj.x[0])},
        "mass": [[float(m) for m in row] for row in traj.mass],
        "files": [os.path.basename(p) for p in paths],
        **{k: float(v) for k, v in traj.meta.items()},
    }
    path = os.path.join(directory, f"{prefix}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    paths.append(path)
    return paths
