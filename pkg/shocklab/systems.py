from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np

from .errors import ComplexOrRepeatedEigenvalues, NoAdmissibleShock, ZeroShockFrameSpeed

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SystemModel:
    """A viscous conservation law u_t + F(u)_x = (B u_x)_x seen in the frame of its shock.

    All callables act on the last axis, so ``flux`` maps (..., n) -> (..., n),
    ``jacobian`` (..., n) -> (..., n, n) and ``hessian`` (..., n) -> (..., n, n, n)
    with ``hessian(u)[..., i, j, k] = d^2 F_i / du_j du_k``.
    """

    name: str
    n: int
    flux: Field
    jacobian: Field
    hessian: Field
    viscosity: Field
    shock_speed: float
    u_minus: np.ndarray
    u_plus: np.ndarray
    params: Dict[str, float] = field(default_factory=dict)

    def frame_flux(self, u: np.ndarray) -> np.ndarray:
        return self.flux(u) - self.shock_speed * u

    def frame_jacobian(self, u: np.ndarray) -> np.ndarray:
        return self.jacobian(u) - self.shock_speed * np.eye(self.n)

    def profile_rhs(self, u: np.ndarray) -> np.ndarray:
        """F(u) - s u - (F(u-) - s u-): the right side of the standing-wave ODE."""
        return self.frame_flux(u) - self.frame_flux(self.u_minus)

    def bilinear(self, u: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.einsum("...ijk,...j,...k->...i", self.hessian(u), a, b)

    def rankine_hugoniot_residual(self) -> float:
        return float(np.max(np.abs(self.frame_flux(self.u_plus) - self.frame_flux(self.u_minus))))


@dataclass(frozen=True, eq=False)
class EndstateData:
    """Characteristic data at one endstate.

    ``left[j]`` and ``right[j]`` are the eigenvectors l_j and r_j of dF(u) - sI for the
    sorted speeds a_j; ``interaction_b[i, j]`` solves B r_j = sum_i b_ij r_i and
    ``interaction_gamma[i, j, k] = l_i . d^2F(r_j, r_k)``.
    """

    side: str
    state: np.ndarray
    speeds: np.ndarray
    left: np.ndarray
    right: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    interaction_b: np.ndarray
    interaction_gamma: np.ndarray

    @property
    def n(self) -> int:
        return len(self.speeds)


class Mode(NamedTuple):
    side: str
    index: int


def make_burgers() -> SystemModel:
    def flux(u: np.ndarray) -> np.ndarray:
        return 0.5 * u**2

    def jacobian(u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float)[..., None]

    def hessian(u: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(u)[:-1] + (1, 1, 1))

    def viscosity(u: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(u)[:-1] + (1, 1))

    return SystemModel(
        name="burgers",
        n=1,
        flux=flux,
        jacobian=jacobian,
        hessian=hessian,
        viscosity=viscosity,
        shock_speed=0.0,
        u_minus=np.array([1.0]),
        u_plus=np.array([-1.0]),
    )


def make_heat(n: int = 1) -> SystemModel:
    """Pure diffusion u_t = u_xx; used as an exact benchmark for the evolution scheme."""
    def flux(u: np.ndarray) -> np.ndarray:
        return np.zeros_like(u, dtype=float)

    def jacobian(u: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(u) + (n,))

    def hessian(u: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(u) + (n, n))

    def viscosity(u: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.eye(n), np.shape(u)[:-1] + (n, n)).copy()

    return SystemModel(
        name="heat",
        n=n,
        flux=flux,
        jacobian=jacobian,
        hessian=hessian,
        viscosity=viscosity,
        shock_speed=0.0,
        u_minus=np.zeros(n),
        u_plus=np.zeros(n),
    )


def _pressure(gamma_gas: float):
    def p(v):
        return v ** (-gamma_gas)

    def dp(v):
        return -gamma_gas * v ** (-gamma_gas - 1.0)

    def d2p(v):
        return gamma_gas * (gamma_gas + 1.0) * v ** (-gamma_gas - 2.0)

    return p, dp, d2p


def _psystem(gamma_gas: float, speed: float, u_minus: np.ndarray, u_plus: np.ndarray) -> SystemModel:
    p, dp, d2p = _pressure(gamma_gas)

    def flux(u: np.ndarray) -> np.ndarray:
        return np.stack([-u[..., 1], p(u[..., 0])], axis=-1)

    def jacobian(u: np.ndarray) -> np.ndarray:
        v = np.asarray(u[..., 0], dtype=float)
        out = np.zeros(v.shape + (2, 2))
        out[..., 0, 1] = -1.0
        out[..., 1, 0] = dp(v)
        return out

    def hessian(u: np.ndarray) -> np.ndarray:
        v = np.asarray(u[..., 0], dtype=float)
        out = np.zeros(v.shape + (2, 2, 2))
        out[..., 1, 0, 0] = d2p(v)
        return out

    def viscosity(u: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.eye(2), np.shape(u)[:-1] + (2, 2)).copy()

    return SystemModel(
        name="psystem",
        n=2,
        flux=flux,
        jacobian=jacobian,
        hessian=hessian,
        viscosity=viscosity,
        shock_speed=speed,
        u_minus=u_minus,
        u_plus=u_plus,
        params={"gamma_gas": gamma_gas},
    )


def make_psystem(gamma_gas: float, v_minus: float, v_plus: float) -> SystemModel:
    """p-system in Lagrangian variables (v, u) with p(v) = v^-gamma and identity viscosity.

    The left velocity is fixed to zero; the shock speed and right velocity come from the
    Rankine-Hugoniot relations, and the sign of s is the one giving a Lax shock.
    """
    if v_minus <= 0 or v_plus <= 0:
        raise NoAdmissibleShock(f"specific volumes must be positive, got {v_minus}, {v_plus}")
    if v_minus == v_plus:
        raise NoAdmissibleShock("v_minus == v_plus: no jump to connect")
    p, _, _ = _pressure(gamma_gas)
    s_squared = -(p(v_plus) - p(v_minus)) / (v_plus - v_minus)
    if s_squared <= 0:
        raise NoAdmissibleShock(f"Rankine-Hugoniot gives s^2 = {s_squared:.6g} <= 0")

    for speed in (np.sqrt(s_squared), -np.sqrt(s_squared)):
        u_minus = np.array([v_minus, 0.0])
        u_plus = np.array([v_plus, -speed * (v_plus - v_minus)])
        model = _psystem(gamma_gas, float(speed), u_minus, u_plus)
        try:
            kind, _ = classify_shock(endstate_data(model, "-"), endstate_data(model, "+"))
        except (ComplexOrRepeatedEigenvalues, ZeroShockFrameSpeed) as exc:
            log.debug("s=%+.6f rejected: %s", speed, exc)
            continue
        if kind == "lax":
            log.debug("p-system shock: s=%+.10f u+=%s", speed, u_plus)
            return model
        log.debug("s=%+.6f rejected: %s", speed, kind)
    raise NoAdmissibleShock(
        f"Lax inequalities fail for both signs of s (gamma={gamma_gas}, v-={v_minus}, v+={v_plus})"
    )


def _normalize_columns(R: np.ndarray) -> np.ndarray:
    R = R.copy()
    for j in range(R.shape[1]):
        col = R[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-12 * np.max(np.abs(col)))[0]
        R[:, j] = col / col[lead]
    return R


def endstate_data(model: SystemModel, side: str, u: Optional[np.ndarray] = None) -> EndstateData:
    if side not in ("-", "+"):
        raise ValueError(f"side must be '-' or '+', got {side!r}")
    if u is None:
        u = model.u_minus if side == "-" else model.u_plus
    u = np.asarray(u, dtype=float)
    A = model.frame_jacobian(u)
    scale = max(1.0, float(np.max(np.abs(A))))

    eigvals, eigvecs = np.linalg.eig(A)
    if np.max(np.abs(eigvals.imag)) > 1e-12 * scale:
        raise ComplexOrRepeatedEigenvalues(f"complex characteristic speeds at {side}: {eigvals}")
    order = np.argsort(eigvals.real)
    speeds = eigvals.real[order]
    if model.n > 1 and np.min(np.diff(speeds)) < 1e-10 * scale:
        raise ComplexOrRepeatedEigenvalues(f"repeated characteristic speeds at {side}: {speeds}")
    if np.min(np.abs(speeds)) < 1e-12 * scale:
        raise ZeroShockFrameSpeed(f"a characteristic speed vanishes in the shock frame at {side}: {speeds}")

    R = _normalize_columns(eigvecs.real[:, order])
    L = np.linalg.inv(R)
    B = model.viscosity(u)
    H = model.hessian(u)
    b = L @ B @ R
    gamma_tensor = np.einsum("ia,abc,bj,ck->ijk", L, H, R, R)

    return EndstateData(
        side=side,
        state=u,
        speeds=speeds,
        left=L,
        right=R.T.copy(),
        beta=np.diag(b).copy(),
        gamma=np.array([gamma_tensor[j, j, j] for j in range(model.n)]),
        interaction_b=b,
        interaction_gamma=gamma_tensor,
    )


def outgoing_modes(data_minus: EndstateData, data_plus: EndstateData) -> List[Mode]:
    modes = [Mode("-", j) for j, a in enumerate(data_minus.speeds) if a < 0]
    modes += [Mode("+", j) for j, a in enumerate(data_plus.speeds) if a > 0]
    return modes


def classify_shock(data_minus: EndstateData, data_plus: EndstateData):
    """Return (kind, i - n) from the number i of characteristics entering the shock."""
    incoming = int(np.sum(data_minus.speeds > 0) + np.sum(data_plus.speeds < 0))
    excess = incoming - data_minus.n
    if excess == 1:
        return "lax", excess
    if excess > 1:
        return "overcompressive", excess
    return "undercompressive", excess


def jacobian_error(model: SystemModel, states: np.ndarray, step: float = 1e-6) -> float:
    """Max relative gap between ``jacobian`` and centered differences of ``flux``."""
    worst = 0.0
    for u in np.atleast_2d(states):
        fd = np.empty((model.n, model.n))
        for k in range(model.n):
            e = np.zeros(model.n)
            e[k] = step * max(1.0, abs(u[k]))
            fd[:, k] = (model.flux(u + e) - model.flux(u - e)) / (2 * e[k])
        exact = model.jacobian(u)
        worst = max(worst, float(np.max(np.abs(fd - exact)) / max(1.0, np.max(np.abs(exact)))))
    return worst


def is_strictly_parabolic(model: SystemModel) -> bool:
    for u in (model.u_minus, model.u_plus):
        if np.min(np.linalg.eigvals(model.viscosity(u)).real) <= 0:
            return False
    return True
