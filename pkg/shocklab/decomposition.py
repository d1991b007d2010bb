from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from scipy.integrate import trapezoid

from .diffusion_waves import DiffusionWaveSet, composite_derivatives, eval_composite
from .errors import DegenerateBasis, MeshMismatch, NoConvergence
from .evolution import GridField, Trajectory
from .profile import DiscreteShockProfile, ShockProfile
from .systems import EndstateData, Mode, SystemModel, outgoing_modes
from .utils import write_csv

log = logging.getLogger(__name__)

NEWTON_ITERATIONS = 50
FD_STEP = 1e-4


@dataclass(frozen=True, eq=False)
class MassDecomposition:
    """M0 = sum_j m_j r_j + delta_star (u+ - u-), solved over outgoing modes."""

    excess_mass: np.ndarray
    masses: Dict[Mode, float]
    delta_star: float
    jump: np.ndarray
    residual: float


@dataclass(frozen=True, eq=False)
class ShiftTrack:
    times: np.ndarray
    delta: np.ndarray
    delta_dot: np.ndarray

    def export_csv(self, path: str) -> None:
        write_csv(path, ["t", "delta", "delta_dot"], np.column_stack([self.times, self.delta, self.delta_dot]))


def _basis(data_minus: EndstateData, data_plus: EndstateData):
    modes = outgoing_modes(data_minus, data_plus)
    jump = data_plus.state - data_minus.state
    cols = [(data_minus if m.side == "-" else data_plus).right[m.index] for m in modes]
    basis = np.column_stack(cols + [jump])
    if basis.shape[0] != basis.shape[1]:
        raise DegenerateBasis(f"{len(modes)} outgoing modes plus u+ - u- do not give {data_minus.n} directions")
    if np.linalg.cond(basis) > 1e12:
        raise DegenerateBasis("outgoing directions and u+ - u- are numerically dependent")
    return modes, jump, basis


def decompose_initial(profile: ShockProfile, perturbation: GridField, data_minus: EndstateData,
                      data_plus: EndstateData) -> MassDecomposition:
    """Split the excess mass of ``perturbation`` (ũ0 - ū on the mesh) into diffusion-wave masses and a shift."""
    modes, jump, basis = _basis(data_minus, data_plus)
    excess = trapezoid(perturbation.values, perturbation.x, axis=0)
    coeffs = np.linalg.solve(basis, excess)
    residual = float(np.max(np.abs(basis @ coeffs - excess)))
    masses = {m: float(c) for m, c in zip(modes, coeffs[:-1])}
    log.info("mass decomposition: M0=%s delta*=%.6g masses=%s", np.array2string(excess, precision=6),
             coeffs[-1], {f"{m.side}{m.index + 1}": round(v, 8) for m, v in masses.items()})
    return MassDecomposition(excess_mass=excess, masses=masses, delta_star=float(coeffs[-1]),
                             jump=jump, residual=residual)


def localization_window(profile: ShockProfile) -> float:
    return 5.0 / profile.decay_rate


def track_delta(profile: ShockProfile, phi: np.ndarray, field: GridField, delta_star: float = 0.0,
                window: Optional[float] = None, tol: float = 1e-12) -> float:
    """Least-squares shift: argmin_d ||field - (ū^{delta*+d} - ū^{delta*}) - phi|| on |x| <= window.

    ``field`` holds ũ - ū^{delta*}; Gauss-Newton from d = 0.
    """
    window = localization_window(profile) if window is None else window
    x = field.x
    inside = np.abs(x) <= window
    xs = x[inside]
    target = field.values[inside] - phi[inside]
    base = profile.evaluate(xs + delta_star)
    if not np.any(np.abs(target) > 0):
        return 0.0
    d = 0.0
    for it in range(NEWTON_ITERATIONS):
        shifted = profile.evaluate(xs + delta_star + d)
        slope = profile.slope(xs + delta_star + d)
        r = target - (shifted - base)
        denom = float(np.sum(slope * slope))
        if denom == 0:
            raise NoConvergence("profile derivative vanishes on the fit window")
        step = float(np.sum(slope * r)) / denom
        d += step
        if abs(step) <= tol * max(1.0, abs(d)):
            log.debug("shift fit converged in %d iterations: %.3e", it + 1, d)
            return d
    raise NoConvergence(f"shift fit did not converge in {NEWTON_ITERATIONS} iterations (last step {step:.3g})")


def track_shift(profile: ShockProfile, perturbations: Trajectory, wave_set: DiffusionWaveSet,
                delta_star: float = 0.0, window: Optional[float] = None) -> ShiftTrack:
    """delta(t_k) for every snapshot of ``perturbations`` (ũ - ū^{delta*}), delta_dot by centered differences."""
    deltas = []
    for f in perturbations.fields:
        phi = eval_composite(wave_set, f.x, f.t)
        deltas.append(track_delta(profile, phi, f, delta_star, window))
    delta = np.array(deltas)
    times = np.asarray(perturbations.times, dtype=float)
    delta_dot = np.gradient(delta, times) if len(times) > 2 else np.zeros_like(delta)
    if abs(delta[0]) > 1e-6:
        log.warning("tracked shift at t=0 is %.3e rather than 0", delta[0])
    return ShiftTrack(times=times, delta=delta, delta_dot=delta_dot)


def assemble_residual(trajectory: Trajectory, reference: ShockProfile, wave_set: DiffusionWaveSet,
                      shift: ShiftTrack) -> Dict[str, Trajectory]:
    """Residuals ũ - ū^{delta*} - phi with three treatments of the shift.

    ``reference`` is ū^{delta*} on the trajectory mesh.  Keys:
      theorem     ũ - ū^{delta*} - phi - ū'^{delta*} delta(t)
      tracked     ũ - ū^{delta*+delta(t)} - phi
      untracked   ũ - ū^{delta*} - phi
    """
    x = trajectory.x
    if len(reference.x) != len(x) or not np.allclose(reference.x, x):
        raise MeshMismatch("reference profile and trajectory use different meshes")
    if len(shift.times) != len(trajectory.times) or not np.allclose(shift.times, trajectory.times):
        raise MeshMismatch("shift track and trajectory use different snapshot times")

    out: Dict[str, list] = {"theorem": [], "tracked": [], "untracked": []}
    for f, d in zip(trajectory.fields, shift.delta):
        phi = eval_composite(wave_set, x, f.t)
        base = f.values - reference.values - phi
        if isinstance(reference, DiscreteShockProfile):
            moved = reference.translate(d).values if d != 0 else reference.values
        else:
            moved = reference.evaluate(x + d)
        out["untracked"].append(base)
        out["theorem"].append(base - reference.derivative * d)
        out["tracked"].append(f.values - moved - phi)

    result = {}
    for key, rows in out.items():
        fields = [GridField(x=x, values=v, t=f.t) for v, f in zip(rows, trajectory.fields)]
        result[key] = Trajectory(
            times=trajectory.times.copy(),
            fields=fields,
            mass=np.array([trapezoid(v, x, axis=0) for v in rows]),
            reference=np.zeros_like(reference.values),
            label=key,
        )
    return result


def forcing_residual(model: SystemModel, profile: ShockProfile, wave_set: DiffusionWaveSet) -> Callable:
    """Return Phi(y, s) = -phi_t - (A(y) phi)_y + B phi_yy - (Q(y)(phi, phi))_y with Q = d^2F(ū)/2.

    Phi is what the diffusion-wave ansatz leaves behind in the perturbation equation; the
    flux term is differenced with a centered step.
    """
    B = model.viscosity(model.u_minus)

    def flux_part(y, s):
        u = profile.evaluate(y)
        phi = eval_composite(wave_set, y, s)
        A = model.frame_jacobian(u)
        return np.einsum("...ij,...j->...i", A, phi) + 0.5 * model.bilinear(u, phi, phi)

    def forcing(y, s) -> np.ndarray:
        y, s = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(s, dtype=float))
        if not wave_set.waves:
            return np.zeros(y.shape + (wave_set.n,))
        _, phi_t, phi_yy = composite_derivatives(wave_set, y, s)
        flux_y = (flux_part(y + FD_STEP, s) - flux_part(y - FD_STEP, s)) / (2 * FD_STEP)
        return -phi_t - flux_y + np.einsum("ij,...j->...i", B, phi_yy)

    return forcing
