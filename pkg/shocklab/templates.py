"""Envelope functions and Green's-function bounding kernels.

Everything here is a pure function of an ``EnvelopeContext`` (characteristic data of both
endstates plus the bound constants C, M, eta, eta0).  Kernels that are Gaussian in the source
variable y are returned as ``GaussianTerm`` lists so the quadrature module can place its nodes
on each term separately.

Kernels are written for sources y <= 0; the y >= 0 branch is obtained from the reflected
context (x -> -x, y -> -y, left and right endstates exchanged).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erfc, expit

from .errors import ConfigError, DegenerateBasis
from .systems import EndstateData, Mode

log = logging.getLogger(__name__)

GAUSS_WINDOW = 8.0


@dataclass(frozen=True, eq=False)
class EnvelopeContext:
    speeds_minus: np.ndarray
    speeds_plus: np.ndarray
    beta_minus: np.ndarray
    beta_plus: np.ndarray
    left_minus: np.ndarray
    left_plus: np.ndarray
    right_minus: np.ndarray
    right_plus: np.ndarray
    excited_minus: np.ndarray
    excited_plus: np.ndarray
    C: float = 1.0
    M: float = 4.0
    eta: float = 0.5
    eta0: float = 0.5
    hyperbolic_speeds: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        beta_max = float(max(np.max(self.beta_minus), np.max(self.beta_plus)))
        if self.M < 4 * beta_max * (1 - 1e-12):
            raise ConfigError(f"bound parameter M={self.M} must be at least 4*max(beta)={4 * beta_max}")
        if self.eta <= 0 or self.eta0 <= 0:
            raise ConfigError(f"eta and eta0 must be positive, got {self.eta}, {self.eta0}")
        if np.any(np.diff(self.speeds_minus) <= 0) or np.any(np.diff(self.speeds_plus) <= 0):
            raise ConfigError("characteristic speeds must be sorted and distinct")

    @property
    def n(self) -> int:
        return len(self.speeds_minus)

    @property
    def outgoing_minus(self) -> np.ndarray:
        return np.flatnonzero(self.speeds_minus < 0)

    @property
    def outgoing_plus(self) -> np.ndarray:
        return np.flatnonzero(self.speeds_plus > 0)

    @property
    def incoming_minus(self) -> np.ndarray:
        return np.flatnonzero(self.speeds_minus > 0)

    @property
    def incoming_plus(self) -> np.ndarray:
        return np.flatnonzero(self.speeds_plus < 0)

    @property
    def outgoing_speeds(self) -> np.ndarray:
        return np.concatenate([self.speeds_minus[self.outgoing_minus], self.speeds_plus[self.outgoing_plus]])

    @property
    def outgoing_modes(self) -> List[Mode]:
        return [Mode("-", int(j)) for j in self.outgoing_minus] + [Mode("+", int(j)) for j in self.outgoing_plus]

    @property
    def has_outgoing(self) -> bool:
        return len(self.outgoing_speeds) > 0

    @property
    def all_speeds(self) -> np.ndarray:
        return np.unique(np.concatenate([self.speeds_minus, self.speeds_plus]))

    def direction(self, mode: Mode) -> np.ndarray:
        return (self.right_minus if mode.side == "-" else self.right_plus)[mode.index]

    def projection(self, mode: Mode) -> np.ndarray:
        return (self.left_minus if mode.side == "-" else self.left_plus)[mode.index]

    def chi(self, x, t) -> np.ndarray:
        """Indicator of the cone a_1^- t <= x <= a_n^+ t."""
        x, t = np.asarray(x, dtype=float), np.asarray(t, dtype=float)
        return ((x >= self.speeds_minus[0] * t) & (x <= self.speeds_plus[-1] * t)).astype(float)

    def reflected(self) -> "EnvelopeContext":
        """The same problem seen through x -> -x; mode k of one side becomes n-1-k of the other."""
        return replace(
            self,
            speeds_minus=-self.speeds_plus[::-1].copy(),
            speeds_plus=-self.speeds_minus[::-1].copy(),
            beta_minus=self.beta_plus[::-1].copy(),
            beta_plus=self.beta_minus[::-1].copy(),
            left_minus=self.left_plus[::-1].copy(),
            left_plus=self.left_minus[::-1].copy(),
            right_minus=self.right_plus[::-1].copy(),
            right_plus=self.right_minus[::-1].copy(),
            excited_minus=self.excited_plus[::-1].copy(),
            excited_plus=self.excited_minus[::-1].copy(),
            hyperbolic_speeds=-self.hyperbolic_speeds[::-1].copy(),
        )


def excited_coefficients(data_minus: EndstateData, data_plus: EndstateData) -> tuple:
    """Coefficient of u+ - u- when each incoming r_k is expanded in {outgoing r_j} + {u+ - u-}."""
    jump = data_plus.state - data_minus.state
    columns = [data_minus.right[j] for j in np.flatnonzero(data_minus.speeds < 0)]
    columns += [data_plus.right[j] for j in np.flatnonzero(data_plus.speeds > 0)]
    basis = np.column_stack(columns + [jump])
    if basis.shape[0] != basis.shape[1] or np.linalg.cond(basis) > 1e12:
        raise DegenerateBasis("outgoing directions and u+ - u- do not form a basis")
    out = []
    for data, incoming in ((data_minus, data_minus.speeds > 0), (data_plus, data_plus.speeds < 0)):
        c = np.zeros(data.n)
        for k in np.flatnonzero(incoming):
            c[k] = np.linalg.solve(basis, data.right[k])[-1]
        out.append(c)
    return out[0], out[1]


def build_context(data_minus: EndstateData, data_plus: EndstateData, decay_rate: float,
                  C: float = 1.0, M: Optional[float] = None, eta: Optional[float] = None,
                  eta0: Optional[float] = None) -> EnvelopeContext:
    c_minus, c_plus = excited_coefficients(data_minus, data_plus)
    beta_max = float(max(np.max(data_minus.beta), np.max(data_plus.beta)))
    return EnvelopeContext(
        speeds_minus=data_minus.speeds.copy(),
        speeds_plus=data_plus.speeds.copy(),
        beta_minus=data_minus.beta.copy(),
        beta_plus=data_plus.beta.copy(),
        left_minus=data_minus.left.copy(),
        left_plus=data_plus.left.copy(),
        right_minus=data_minus.right.copy(),
        right_plus=data_plus.right.copy(),
        excited_minus=c_minus,
        excited_plus=c_plus,
        C=C,
        M=4.0 * beta_max if M is None else M,
        eta=0.5 * decay_rate if eta is None else eta,
        eta0=0.5 * decay_rate if eta0 is None else eta0,
        hyperbolic_speeds=np.unique(np.concatenate([data_minus.speeds, data_plus.speeds])),
    )


# envelopes


def errfn(z) -> np.ndarray:
    """∫_{-inf}^z e^{-xi^2} dxi / sqrt(pi), so errfn(-inf) = 0 and errfn(+inf) = 1."""
    return 0.5 * erfc(-np.asarray(z, dtype=float))


def _grid(x, t):
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    return x, t


def _psi1_sum(ctx: EnvelopeContext, x, t, lag) -> np.ndarray:
    x, t = _grid(x, t)
    total = np.zeros(x.shape)
    for a in ctx.outgoing_speeds:
        total += (1 + t) ** -0.5 * (1 + np.abs(x - a * t) + lag) ** -0.75
    return ctx.chi(x, t) * total


def psi1(ctx: EnvelopeContext, x, t) -> np.ndarray:
    _, t = _grid(x, t)
    return _psi1_sum(ctx, x, t, np.cbrt(t))


def psi1_bar(ctx: EnvelopeContext, x, t) -> np.ndarray:
    return _psi1_sum(ctx, x, t, 0.0)


def psi2(ctx: EnvelopeContext, x, t) -> np.ndarray:
    x, t = _grid(x, t)
    total = np.zeros(x.shape)
    for a in ctx.outgoing_speeds:
        total += (1 + np.abs(x - a * t) + np.sqrt(t)) ** -1.5
    return total


def alpha_env(ctx: EnvelopeContext, x, t) -> np.ndarray:
    x, t = _grid(x, t)
    return ctx.chi(x, t) * (1 + t) ** -0.75 * (1 + np.abs(x)) ** -0.5


def fallback_envelope(ctx: EnvelopeContext, x, t) -> np.ndarray:
    """alpha + (1+t)^-3/4 e^{-eta|x|}; stands in for psi2 when there is no outgoing mode."""
    x, t = _grid(x, t)
    return alpha_env(ctx, x, t) + (1 + t) ** -0.75 * np.exp(-ctx.eta * np.abs(x))


def theorem_envelope(ctx: EnvelopeContext, x, t, bar: bool = False) -> np.ndarray:
    """psi1 + psi2 + alpha (psi1_bar when ``bar``), or the fallback with no outgoing modes."""
    if not ctx.has_outgoing:
        return fallback_envelope(ctx, x, t)
    first = psi1_bar(ctx, x, t) if bar else psi1(ctx, x, t)
    return first + psi2(ctx, x, t) + alpha_env(ctx, x, t)


def phi_bound(ctx: EnvelopeContext, y, s) -> np.ndarray:
    """Diffusion-wave template (1+s)^-1/2 e^{-(y - a s)^2 / M(1+s)} summed over outgoing modes."""
    y, s = _grid(y, s)
    total = np.zeros(y.shape)
    for a in ctx.outgoing_speeds:
        total += (1 + s) ** -0.5 * np.exp(-((y - a * s) ** 2) / (ctx.M * (1 + s)))
    return total


def crude_inequality(a, b) -> np.ndarray:
    """1/(1+|a+b|) <= (1+|b|)/(1+|a|), elementwise."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return 1.0 / (1 + np.abs(a + b)) <= (1 + np.abs(b)) / (1 + np.abs(a)) * (1 + 1e-14)


def psi_comparison(ctx: EnvelopeContext, x, t) -> tuple:
    """(min, max) over the grid of psi1 / min{(1+t)^-3/4, psi1_bar} where psi1 > 0."""
    x, t = _grid(x, t)
    p1 = psi1(ctx, x, t)
    ref = np.minimum((1 + t) ** -0.75, psi1_bar(ctx, x, t))
    live = (p1 > 0) & (ref > 0)
    if not np.any(live):
        return float("nan"), float("nan")
    ratio = p1[live] / ref[live]
    return float(np.min(ratio)), float(np.max(ratio))


def psi2_interpolation_ratio(ctx: EnvelopeContext, x, t) -> float:
    """max of psi2 / sum (1+t)^-3/8 (1+|x - a t|)^-3/4; finite by a^2 + b^2 >= 2ab."""
    x, t = _grid(x, t)
    ref = np.zeros(x.shape)
    for a in ctx.outgoing_speeds:
        ref += (1 + t) ** -0.375 * (1 + np.abs(x - a * t)) ** -0.75
    if not ctx.has_outgoing:
        return 0.0
    return float(np.max(psi2(ctx, x, t) / ref))


# excited kernels


def _reflect_side(side: str) -> str:
    return "-" if side == "+" else "+"


def _check_incoming(ctx: EnvelopeContext, k: int) -> float:
    a = float(ctx.speeds_minus[k])
    if a <= 0:
        raise ValueError(f"mode {k} is not incoming on the left (a = {a:.4g})")
    return a


def excited_e(ctx: EnvelopeContext, side: str, k: int, y, t) -> np.ndarray:
    """errfn((y + a_k t)/sqrt(4 beta_k t)) - errfn((y - a_k t)/sqrt(4 beta_k t)) for incoming mode k.

    On the '+' side y >= 0 and k indexes the right endstate.
    """
    if side == "+":
        return excited_e(ctx.reflected(), "-", ctx.n - 1 - k, -np.asarray(y, dtype=float), t)
    a = _check_incoming(ctx, k)
    y, t = _grid(y, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        width = np.sqrt(4 * ctx.beta_minus[k] * t)
        out = errfn((y + a * t) / width) - errfn((y - a * t) / width)
    return np.where(t > 0, out, 0.0)


def excited_e_derivatives(ctx: EnvelopeContext, side: str, k: int, y, t) -> tuple:
    """Exact (e_t, e_y) of ``excited_e``; requires t > 0."""
    if side == "+":
        e_t, e_y = excited_e_derivatives(ctx.reflected(), "-", ctx.n - 1 - k, -np.asarray(y, dtype=float), t)
        return e_t, -e_y
    a = _check_incoming(ctx, k)
    y, t = _grid(y, t)
    width = np.sqrt(4 * ctx.beta_minus[k] * t)
    z1, z2 = (y + a * t) / width, (y - a * t) / width
    g1, g2 = np.exp(-z1**2) / np.sqrt(np.pi), np.exp(-z2**2) / np.sqrt(np.pi)
    e_y = (g1 - g2) / width
    e_t = g1 * (a * t - y) / (2 * t * width) - g2 * (-a * t - y) / (2 * t * width)
    return e_t, e_y


def _incoming(ctx: EnvelopeContext, side: str) -> tuple:
    if side == "-":
        return ctx.incoming_minus, ctx.speeds_minus, ctx.excited_minus, ctx.left_minus
    return ctx.incoming_plus, ctx.speeds_plus, ctx.excited_plus, ctx.left_plus


def _excited_bound(ctx: EnvelopeContext, y, t, power: float) -> np.ndarray:
    y, t = _grid(y, t)
    total = np.zeros(y.shape)
    for side, on_side in (("-", y <= 0), ("+", y > 0)):
        idx, speeds, _, _ = _incoming(ctx, side)
        for k in idx:
            total += np.where(on_side, np.exp(-((y + speeds[k] * t) ** 2) / (ctx.M * t)), 0.0)
    return ctx.C * t**-power * total


def excited_e_dt(ctx: EnvelopeContext, y, t) -> np.ndarray:
    """Bounding value C t^-1/2 sum e^{-|y + a_k t|^2/Mt} of |e_t|."""
    return _excited_bound(ctx, y, t, 0.5)


def excited_e_dy(ctx: EnvelopeContext, y, t) -> np.ndarray:
    return _excited_bound(ctx, y, t, 0.5)


def excited_e_dyt(ctx: EnvelopeContext, y, t) -> np.ndarray:
    return _excited_bound(ctx, y, t, 1.0)


def excited_row(ctx: EnvelopeContext, y, t, derivative: Optional[str] = None) -> np.ndarray:
    """Row vector e(y,t) = sum_k c_k l_k e_k(y,t) over incoming modes of the side of y.

    ``derivative`` selects e itself (None), ``"t"`` or ``"y"``.
    """
    y, t = _grid(y, t)
    out = np.zeros(y.shape + (ctx.n,))
    for side, on_side in (("-", y <= 0), ("+", y > 0)):
        idx, _, coeff, left = _incoming(ctx, side)
        for k in idx:
            if derivative is None:
                val = excited_e(ctx, side, int(k), y, t)
            else:
                e_t, e_y = excited_e_derivatives(ctx, side, int(k), y, t)
                val = e_t if derivative == "t" else e_y
            out += np.where(on_side, val, 0.0)[..., None] * (coeff[k] * left[k])
    return out


# Gaussian kernel terms


@dataclass(frozen=True, eq=False)
class GaussianTerm:
    """amplitude * exp(-(y - center)^2 / width2) on lo <= y <= hi.

    Fields may be arrays broadcasting over a batch of times.  ``source`` and ``target`` name
    the modes a matrix-valued kernel term projects from (l) and onto (r).
    """

    kind: str
    amplitude: np.ndarray
    center: np.ndarray
    width2: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    source: Optional[Mode] = None
    target: Optional[Mode] = None

    def value(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        inside = (y >= self.lo) & (y <= self.hi)
        return np.where(inside, self.amplitude * np.exp(-((y - self.center) ** 2) / self.width2), 0.0)

    def window(self) -> tuple:
        """Integration limits: the support clipped to center +- 8 standard deviations."""
        sigma = np.sqrt(0.5 * self.width2)
        return (np.maximum(self.lo, self.center - GAUSS_WINDOW * sigma),
                np.minimum(self.hi, self.center + GAUSS_WINDOW * sigma))

    def mirrored(self, n: int) -> "GaussianTerm":
        return GaussianTerm(
            kind=self.kind,
            amplitude=self.amplitude,
            center=-self.center,
            width2=self.width2,
            lo=-self.hi,
            hi=-self.lo,
            source=_mirror_mode(self.source, n),
            target=_mirror_mode(self.target, n),
        )


def _mirror_mode(mode: Optional[Mode], n: int) -> Optional[Mode]:
    if mode is None:
        return None
    return Mode(_reflect_side(mode.side), n - 1 - mode.index)


def _left_terms(ctx: EnvelopeContext, order: str, x: float, t: np.ndarray) -> List[GaussianTerm]:
    t = np.asarray(t, dtype=float)
    rank = 0 if order == "0" else 1
    pref = ctx.C * (t ** (-0.5 * rank) + (np.exp(-ctx.eta * abs(x)) if order == "x" else 0.0))
    cut_plus = np.exp(-ctx.eta * max(x, 0.0))
    cut_minus = np.exp(-ctx.eta * max(-x, 0.0))
    amp = pref * t**-0.5
    zero = np.zeros_like(t)
    terms = []
    for k, a in enumerate(ctx.speeds_minus):
        terms.append(GaussianTerm("convection", amp * cut_plus, x - a * t, ctx.M * t, zero - np.inf, zero,
                                  Mode("-", k), Mode("-", k)))
    for k in ctx.incoming_minus:
        ak = ctx.speeds_minus[k]
        for j in ctx.outgoing_minus:
            aj = ctx.speeds_minus[j]
            terms.append(GaussianTerm("reflection", amp * cut_plus, (x - aj * t) * ak / aj,
                                      ctx.M * t * (ak / aj) ** 2, -ak * t, zero, Mode("-", int(k)), Mode("-", int(j))))
        for j in ctx.outgoing_plus:
            aj = ctx.speeds_plus[j]
            terms.append(GaussianTerm("transmission", amp * cut_minus, (x - aj * t) * ak / aj,
                                      ctx.M * t * (ak / aj) ** 2, -ak * t, zero, Mode("-", int(k)), Mode("+", int(j))))
    return terms


def gtilde_terms(ctx: EnvelopeContext, order: str, x: float, t) -> List[GaussianTerm]:
    """Convection, reflection and transmission terms of the unified bound on |d^alpha G~(x,t;y)|.

    ``order`` is "0", "x" or "y"; terms of both source half-lines are returned.
    """
    if order not in ("0", "x", "y"):
        raise ValueError(f"derivative order must be '0', 'x' or 'y', got {order!r}")
    left = _left_terms(ctx, order, float(x), t)
    right = [term.mirrored(ctx.n) for term in _left_terms(ctx.reflected(), order, -float(x), t)]
    return left + right


def gtilde_bound(ctx: EnvelopeContext, order: str, x: float, t: float, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    total = np.zeros(y.shape)
    for term in gtilde_terms(ctx, order, x, t):
        total += term.value(y)
    return total


def excited_bound_terms(ctx: EnvelopeContext, order: str, t) -> List[GaussianTerm]:
    """Bounds on |e_y| ("y") or |e_yt| ("yt") as Gaussian terms in y."""
    t = np.asarray(t, dtype=float)
    amp = ctx.C * (t**-0.5 if order == "y" else t**-1.0)
    zero = np.zeros_like(t)
    terms = []
    for k in ctx.incoming_minus:
        terms.append(GaussianTerm("excited", amp, -ctx.speeds_minus[k] * t, ctx.M * t, zero - np.inf, zero,
                                  Mode("-", int(k))))
    for k in ctx.incoming_plus:
        terms.append(GaussianTerm("excited", amp, -ctx.speeds_plus[k] * t, ctx.M * t, zero, zero + np.inf,
                                  Mode("+", int(k))))
    return terms


def _model_left_terms(ctx: EnvelopeContext, x: float, t: np.ndarray) -> List[GaussianTerm]:
    t = np.asarray(t, dtype=float)
    zero = np.zeros_like(t)
    to_left = float(expit(-2 * x))
    to_right = float(expit(2 * x))
    terms = []
    for k, a in enumerate(ctx.speeds_minus):
        beta = ctx.beta_minus[k]
        amp = (4 * np.pi * beta * t) ** -0.5 * (to_left if a > 0 else 1.0)
        terms.append(GaussianTerm("convection", amp, x - a * t, 4 * beta * t, zero - np.inf, zero,
                                  Mode("-", k), Mode("-", k)))
    for k in ctx.incoming_minus:
        ak = ctx.speeds_minus[k]
        for side, outgoing, speeds, betas, cut in (("-", ctx.outgoing_minus, ctx.speeds_minus, ctx.beta_minus, to_left),
                                                   ("+", ctx.outgoing_plus, ctx.speeds_plus, ctx.beta_plus, to_right)):
            for j in outgoing:
                aj, bj = speeds[j], betas[j]
                kind = "reflection" if side == "-" else "transmission"
                terms.append(GaussianTerm(kind, (4 * np.pi * bj * t) ** -0.5 * cut, (x - aj * t) * ak / aj,
                                          4 * bj * t * (ak / aj) ** 2, -ak * t, zero,
                                          Mode("-", int(k)), Mode(side, int(j))))
    return terms


def model_kernel_terms(ctx: EnvelopeContext, x: float, t) -> List[GaussianTerm]:
    """Signed constant-coefficient model of the scattering kernel S(x,t;y).

    Each term stands for r_target l_source^T times a convected heat kernel; reflected and
    transmitted pieces use beta_j and unit scattering coefficients.
    """
    left = _model_left_terms(ctx, float(x), t)
    right = [term.mirrored(ctx.n) for term in _model_left_terms(ctx.reflected(), -float(x), t)]
    return left + right


def apply_model_kernel(ctx: EnvelopeContext, terms: List[GaussianTerm], y, values) -> np.ndarray:
    """sum_terms r_target * term(y) * (l_source . values(y)); ``values`` has shape y.shape + (n,)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape + (ctx.n,))
    for term in terms:
        weight = term.value(y) * (values @ ctx.projection(term.source))
        out += weight[..., None] * ctx.direction(term.target)
    return out


# hyperbolic part


def hkernel_collapse(ctx: EnvelopeContext, v0: Callable, x, t) -> np.ndarray:
    """sum_j e^{-eta0 t} |v0(a_j t - x)|: the y-integral of the point-mass H kernel against v0."""
    x, t = _grid(x, t)
    total = np.zeros(x.shape)
    for a in ctx.hyperbolic_speeds:
        total += np.abs(v0(a * t - x))
    return np.exp(-ctx.eta0 * t) * total


def composite_gauss(panels: int, order: int) -> tuple:
    """Composite Gauss-Legendre nodes and weights on [0, 1]."""
    base_x, base_w = leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)[:, None]
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    return (mid + half * base_x).ravel(), (half * base_w).ravel()


def hkernel_time_integral(ctx: EnvelopeContext, weight: Callable, panels: int = 16, order: int = 8) -> Callable:
    """Return (x, t) -> sum_j ∫_0^t e^{-eta0 (t-s)} |weight(a_j (t-s) - x, s)| ds.

    The s-range is split at t/2 and each half is integrated in u with s = u^2 and t - s = u^2,
    which removes integrable s^-1/2 endpoint factors.  ``weight`` must accept arrays.
    """
    nodes, weights = composite_gauss(panels, order)

    def integral(x: float, t: float) -> float:
        if t <= 0:
            return 0.0
        half = np.sqrt(0.5 * t)
        u = half * nodes
        w = 2.0 * u * half * weights
        total = 0.0
        for a in ctx.hyperbolic_speeds:
            early_lag = t - u * u
            total += np.sum(w * np.exp(-ctx.eta0 * early_lag) * np.abs(weight(a * early_lag - x, u * u)))
            total += np.sum(w * np.exp(-ctx.eta0 * u * u) * np.abs(weight(a * u * u - x, t - u * u)))
        return float(total)

    return integral
