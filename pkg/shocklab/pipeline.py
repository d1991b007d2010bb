"""Orchestration for the ``shock`` commands: set up the model, run, verify, write artifacts."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .config import ExperimentConfig, PerturbationSpec, check_smallness, validate_semantics
from .decomposition import MassDecomposition, ShiftTrack, assemble_residual, decompose_initial, forcing_residual, \
    track_shift
from .diffusion_waves import DiffusionWaveSet, build_wave_set, wave_mass
from .errors import ConfigError
from .evolution import GridField, Trajectory, evolution_mesh, evolve_nonlinear, export_trajectory, \
    green_function_approx, steady_state
from .kernel_quadrature import (CERTIFICATE_IDS, GROUPED_IDS, LEMMA32_IDS, LEMMA35_IDS, InequalityCertificate,
                                NonlinearityTemplate, QuadratureSettings, certify_lemma32, certify_lemma33,
                                certify_lemma34, certify_lemma35, initial_data_template, liu_integration_by_parts_check)
from .profile import DiscreteShockProfile, ShockProfile, connection_mass, discrete_profile, \
    frozen_coefficient_ratio, solve_profile
from .renderer import render_md
from .schema import assert_valid_certificate, assert_valid_manifest, assert_valid_report
from .systems import EndstateData, SystemModel, classify_shock, endstate_data, outgoing_modes
from .templates import EnvelopeContext, build_context, theorem_envelope
from .utils import finite_or_none, geometric_times, manifest, unique_preserve_order, write_csv, write_json
from .verification import (VerificationReport, derivative_envelope_check, envelope_consistency, far_field_time,
                           green_function_report, heat_kernel_match, lp_norms, lp_rates, pointwise_ratio,
                           shift_constants, shift_rates, zeta_series)

log = logging.getLogger(__name__)

COMMANDS = ("profile", "evolve", "verify")
VARIANTS = ("theorem", "tracked", "untracked")
MASS_DRIFT_TOL = 1e-6
HEAT_MAP_POINTS = 400


@dataclass
class Setup:
    model: SystemModel
    data_minus: EndstateData
    data_plus: EndstateData
    kind: str
    excess: int
    profile: ShockProfile


@dataclass
class SimulationRun:
    base: DiscreteShockProfile
    reference: DiscreteShockProfile
    perturbation: np.ndarray
    decomposition: MassDecomposition
    wave_set: DiffusionWaveSet
    trajectory: Trajectory
    track: ShiftTrack
    residuals: Dict[str, Trajectory]

    @property
    def x(self) -> np.ndarray:
        return self.base.x


def default_direction(model: SystemModel) -> np.ndarray:
    jump = np.asarray(model.u_plus - model.u_minus, dtype=float)
    return jump / np.linalg.norm(jump)


def _direction(spec: PerturbationSpec, model: SystemModel) -> np.ndarray:
    if spec.direction is None:
        return default_direction(model)
    d = np.asarray(spec.direction, dtype=float)
    if d.shape != (model.n,) or not np.linalg.norm(d) > 0:
        raise ConfigError(f"perturbation direction {spec.direction} must be a nonzero vector of length {model.n}")
    return d / np.linalg.norm(d)


def perturbation_values(specs: Sequence[PerturbationSpec], model: SystemModel,
                        base: DiscreteShockProfile) -> np.ndarray:
    """ũ0 - ū on the mesh of ``base``, summed over the configured components."""
    x = base.x
    total = np.zeros_like(base.values)
    for spec in specs:
        if spec.shape == "shifted-profile":
            total += base.translate(spec.amplitude).values - base.values
            continue

        def bump(center):
            return np.exp(-((x - center) ** 2) / (2 * spec.width**2))

        if spec.shape == "gaussian":
            shape = bump(spec.center)
        elif spec.shape == "dipole":
            shape = bump(spec.center) - bump(spec.center + spec.width)
        else:
            raise ConfigError(f"unknown perturbation shape {spec.shape!r}")
        total += spec.amplitude * shape[:, None] * _direction(spec, model)
    return total


def prepare(cfg: ExperimentConfig) -> Setup:
    model = cfg.model.build()
    validate_semantics(cfg, model)
    dm, dp = endstate_data(model, "-"), endstate_data(model, "+")
    kind, excess = classify_shock(dm, dp)
    log.info("%s shock: %s (i - n = %d), speeds %s | %s", model.name, kind, excess, dm.speeds, dp.speeds)
    profile = solve_profile(model, cfg.mesh.halfwidth, cfg.mesh.points)
    return Setup(model, dm, dp, kind, excess, profile)


def simulate(cfg: ExperimentConfig, setup: Setup) -> SimulationRun:
    """Evolve ū_h + perturbation, then track the shift and form the residuals."""
    model = setup.model
    x = evolution_mesh(model, cfg.mesh.halfwidth, cfg.mesh.spacing, cfg.time.t_end, cfg.mesh.auto_extend)
    base = steady_state(model, x, cfg.time.flux)
    pert = perturbation_values(cfg.perturbation, model, base)
    decomp = decompose_initial(base, GridField(x=x, values=pert), setup.data_minus, setup.data_plus)
    wave_set = build_wave_set(setup.data_minus, setup.data_plus, decomp.masses)
    reference = base.translate(decomp.delta_star)

    traj = evolve_nonlinear(model, base, GridField(x=x, values=base.values + pert), cfg.time.t_end,
                            dt=cfg.time.dt, flux=cfg.time.flux, snapshot_base=cfg.time.snapshot_base)
    fields = [GridField(x=x, values=f.values - reference.values, t=f.t) for f in traj.fields]
    perturbations = Trajectory(times=traj.times.copy(), fields=fields,
                               mass=np.array([trapezoid(f.values, x, axis=0) for f in fields]),
                               reference=np.zeros_like(base.values), label="perturbation")
    track = track_shift(reference, perturbations, wave_set, delta_star=0.0)
    residuals = assemble_residual(traj, reference, wave_set, track)
    return SimulationRun(base, reference, pert, decomp, wave_set, traj, track, residuals)


def envelope_context(cfg: ExperimentConfig, setup: Setup) -> EnvelopeContext:
    b = cfg.bounds
    return build_context(setup.data_minus, setup.data_plus, setup.profile.decay_rate, b.C, b.M, b.eta, b.eta0)


def _model_doc(setup: Setup) -> dict:
    model = setup.model
    return {
        "name": model.name,
        "n": model.n,
        "shock_speed": float(model.shock_speed),
        "classification": setup.kind,
        "excess": int(setup.excess),
        "u_minus": [float(v) for v in model.u_minus],
        "u_plus": [float(v) for v in model.u_plus],
        "speeds_minus": [float(v) for v in setup.data_minus.speeds],
        "speeds_plus": [float(v) for v in setup.data_plus.speeds],
        "outgoing": [f"{m.side}{m.index + 1}" for m in outgoing_modes(setup.data_minus, setup.data_plus)],
    }


def _profile_doc(profile: ShockProfile) -> dict:
    return {
        "decay_rate": float(profile.decay_rate),
        "ode_residual": float(profile.residual),
        "halfwidth": profile.halfwidth,
        "points": int(len(profile.x)),
        "connection_mass": [float(v) for v in connection_mass(profile)],
    }


def _decomposition_doc(run: SimulationRun) -> dict:
    d = run.decomposition
    return {
        "excess_mass": [float(v) for v in d.excess_mass],
        "masses": {f"{m.side}{m.index + 1}": float(v) for m, v in d.masses.items()},
        "delta_star": float(d.delta_star),
        "residual": float(d.residual),
    }


def mass_record(run: SimulationRun) -> Dict[str, float]:
    """Conservation of ∫(ũ - ū_h) and bookkeeping of the diffusion-wave masses."""
    x = run.x
    initial_l1 = float(trapezoid(np.linalg.norm(run.perturbation, axis=-1), x))
    mass = run.trajectory.mass
    drift = float(np.max(np.abs(mass - mass[0]))) if len(mass) else 0.0
    t_end = float(run.trajectory.times[-1])
    wave_error = max((abs(wave_mass(w, t_end) - w.mass) for w in run.wave_set.waves), default=0.0)
    log.info("mass drift %.3e (bound %.3e), diffusion-wave mass error %.3e", drift,
             MASS_DRIFT_TOL * initial_l1, wave_error)
    return {
        "initial_l1": initial_l1,
        "drift": drift,
        "drift_bound": MASS_DRIFT_TOL * initial_l1,
        "wave_mass_error": float(wave_error),
        "decomposition_residual": float(run.decomposition.residual),
    }


def _shift_split_row(lp: Dict[str, dict]) -> dict:
    theorem, untracked = lp["theorem"]["2"], lp["untracked"]["2"]
    if theorem.at_noise_floor or untracked.at_noise_floor:
        passed = True
    else:
        passed = bool(untracked.exponent >= theorem.exponent - 0.05
                      and untracked.exponent <= untracked.prediction + 0.1)
    return {
        "theorem_l2": finite_or_none(theorem.exponent),
        "untracked_l2": finite_or_none(untracked.exponent),
        "tracked_l2": finite_or_none(lp["tracked"]["2"].exponent),
        "passed": passed,
    }


def _lp_all(cfg: ExperimentConfig, run: SimulationRun, threads: int) -> Dict[str, dict]:
    vc = cfg.verification

    def fits(variant):
        return variant, lp_rates(run.residuals[variant], variant, vc.fit_t_min, vc.noise_floor, vc.lp_tolerance)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return dict(pool.map(fits, VARIANTS))


def _green_reports(cfg: ExperimentConfig, setup: Setup, ctx: EnvelopeContext, spacing: float) -> List[dict]:
    vc = cfg.verification
    model = setup.model
    direction = default_direction(model)
    x = evolution_mesh(model, cfg.mesh.halfwidth, spacing, vc.green_t_end, cfg.mesh.auto_extend)
    base = discrete_profile(model, x)
    out = []
    for y in vc.green_sources:
        t_far = far_field_time(ctx, y, vc.green_t_end)
        a_max = float(np.max(np.abs(ctx.all_speeds)))
        t_match = t_far if t_far is not None else min(vc.green_t_end, max(1.0, 0.5 * abs(y) / a_max))
        times = sorted(set(float(t) for t in geometric_times(vc.green_t_end)) | {vc.green_t_end, t_match})
        green = green_function_approx(model, base, y, vc.green_width, vc.green_t_end, direction=direction,
                                      times=times)
        report = green_function_report(base, ctx, green, y, direction)
        report["heat_kernel_gap"] = heat_kernel_match(ctx, green, y, direction, t_match, vc.green_width)
        report["heat_kernel_time"] = float(green.at(t_match).t)
        report["far_field"] = t_far is not None
        log.info("Green's function from y=%g: C_fit=%s, heat-kernel L1 gap %.3g at t=%.3g (%s)", y, report["c_fit"],
                 report["heat_kernel_gap"], t_match, "far field" if t_far is not None else "near the shock")
        out.append(report)
    return out


def _refinement(cfg: ExperimentConfig, setup: Setup, ctx: EnvelopeContext, run_lp: Dict[str, dict],
                shift: dict, green: List[dict], threads: int) -> float:
    """Rerun at h/2 and return the largest change of any fitted exponent; annotates ``green`` in place."""
    fine_cfg = replace(cfg, mesh=replace(cfg.mesh, spacing=0.5 * cfg.mesh.spacing),
                       time=replace(cfg.time, dt=None if cfg.time.dt is None else 0.5 * cfg.time.dt))
    log.info("refinement run at h=%g", fine_cfg.mesh.spacing)
    fine = simulate(fine_cfg, setup)
    fine_lp = _lp_all(fine_cfg, fine, threads)
    fine_shift = shift_rates(fine.track, cfg.verification.fit_t_min)
    changes = []
    for variant in ("theorem", "untracked"):
        for p, fit in run_lp[variant].items():
            changes.append(abs(fine_lp[variant][p].exponent - fit.exponent))
    for key, fit in shift.items():
        changes.append(abs(fine_shift[key].exponent - fit.exponent))
    changes = [c for c in changes if np.isfinite(c)]
    if green:
        for coarse, refined in zip(green, _green_reports(fine_cfg, setup, ctx, fine_cfg.mesh.spacing)):
            a, b = coarse["c_fit"], refined["c_fit"]
            coarse["c_fit_refined"] = b
            coarse["c_fit_change"] = abs(b - a) / a if a and b is not None else None
    return float(max(changes, default=0.0))


def verify_run(cfg: ExperimentConfig, setup: Setup, run: SimulationRun, ctx: EnvelopeContext,
               threads: int = 1) -> VerificationReport:
    vc = cfg.verification
    theorem = run.residuals["theorem"]
    pointwise = pointwise_ratio(theorem, ctx, vc.fit_t_min, slope_tolerance=vc.ratio_slope_tolerance)
    derivative = derivative_envelope_check(theorem, ctx, fit_t_min=vc.fit_t_min,
                                           slope_tolerance=vc.ratio_slope_tolerance)
    zeta = zeta_series(theorem, run.track, ctx, vc.fit_t_min, slope_tolerance=vc.ratio_slope_tolerance)
    lp = _lp_all(cfg, run, threads)
    amplitude = max(sum(abs(p.amplitude) for p in cfg.perturbation), 1e-300)
    shift = shift_rates(run.track, vc.fit_t_min, amplitude=amplitude)

    extras: Dict[str, object] = {
        "envelope_consistency": envelope_consistency(theorem, pointwise, ctx),
        "shift_constants": shift_constants(run.track, amplitude),
        "frozen_coefficient_ratio": frozen_coefficient_ratio(setup.model, setup.profile, ctx.eta),
        "shift_split": _shift_split_row(lp),
        "bounds": {"C": ctx.C, "M": ctx.M, "eta": ctx.eta, "eta0": ctx.eta0},
    }
    green = _green_reports(cfg, setup, ctx, cfg.mesh.spacing) if vc.green_sources else []
    if vc.refinement_check:
        extras["refinement_max_change"] = _refinement(cfg, setup, ctx, lp, shift, green, threads)
    if green:
        extras["green"] = green
    report = VerificationReport(pointwise=pointwise, derivative=derivative, lp=lp, shift=shift, zeta=zeta,
                                mass=mass_record(run), extras=extras)
    for name, ok in report.checks.items():
        log.info("check %-28s %s", name, "pass" if ok else "FAIL")
    return report


# artifacts


def _finish(cfg: ExperimentConfig, out_dir: str, paths: List[str]) -> List[str]:
    paths = unique_preserve_order(paths)
    doc = manifest(cfg.digest(), paths, out_dir)
    assert_valid_manifest(doc)
    path = os.path.join(out_dir, "manifest.json")
    write_json(path, doc)
    return paths + [path]


def _norm_series(residuals: Dict[str, Trajectory]) -> Dict[str, dict]:
    out = {}
    for variant, traj in residuals.items():
        norms = lp_norms(traj)
        out[variant] = {"times": [float(t) for t in traj.times],
                        **{p: [float(v) for v in series] for p, series in norms.items()}}
    return out


def _heat_map_rows(residual: Trajectory, ctx: EnvelopeContext) -> np.ndarray:
    """(x, t, |v|/env) on at most HEAT_MAP_POINTS x-samples per snapshot."""
    rows = []
    x = residual.x
    idx = np.unique(np.linspace(0, len(x) - 1, min(len(x), HEAT_MAP_POINTS)).astype(int))
    for f in residual.fields:
        env = theorem_envelope(ctx, x[idx], f.t)
        mag = np.linalg.norm(f.values[idx], axis=-1)
        ratio = np.where(env > 1e-12, mag / np.maximum(env, 1e-300), 0.0)
        rows.append(np.column_stack([x[idx], np.full(len(idx), f.t), ratio]))
    return np.vstack(rows)


def write_profile(cfg: ExperimentConfig, setup: Setup, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "profile.csv")
    setup.profile.export_csv(csv_path)
    doc = {"config_hash": cfg.digest(), "name": cfg.name, "model": _model_doc(setup),
           "profile": _profile_doc(setup.profile)}
    json_path = os.path.join(out_dir, "profile.json")
    write_json(json_path, doc)
    return [csv_path, json_path]


def write_evolution(cfg: ExperimentConfig, setup: Setup, run: SimulationRun, out_dir: str) -> List[str]:
    paths = export_trajectory(run.trajectory, os.path.join(out_dir, "trajectory"), "snapshot")
    track_path = os.path.join(out_dir, "shift_track.csv")
    run.track.export_csv(track_path)
    doc = {
        "config_hash": cfg.digest(),
        "name": cfg.name,
        "model": _model_doc(setup),
        "decomposition": _decomposition_doc(run),
        "mass": {k: finite_or_none(v) for k, v in mass_record(run).items()},
        "times": [float(t) for t in run.trajectory.times],
    }
    json_path = os.path.join(out_dir, "evolution.json")
    write_json(json_path, doc)
    return paths + [track_path, json_path]


def write_report(cfg: ExperimentConfig, setup: Setup, run: SimulationRun, ctx: EnvelopeContext,
                 report: VerificationReport, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, series in (("pointwise", report.pointwise), ("derivative", report.derivative),
                         ("zeta", report.zeta)):
        path = os.path.join(out_dir, f"ratio_{name}.csv")
        write_csv(path, ["t", "ratio"], np.column_stack([series.times, series.ratio]))
        paths.append(path)
    heat_path = os.path.join(out_dir, "envelope_ratio.csv")
    write_csv(heat_path, ["x", "t", "ratio"], _heat_map_rows(run.residuals["theorem"], ctx))
    paths.append(heat_path)

    doc = {
        "config_hash": cfg.digest(),
        "name": cfg.name,
        "model": _model_doc(setup),
        "profile": _profile_doc(setup.profile),
        "decomposition": _decomposition_doc(run),
        "verification": report.to_dict(),
        "norms": _norm_series(run.residuals),
        "shift_track": {"times": [float(t) for t in run.track.times],
                        "delta": [float(v) for v in run.track.delta],
                        "delta_dot": [float(v) for v in run.track.delta_dot]},
        "artifacts": {"envelope_ratio": os.path.basename(heat_path)},
        "passed": report.passed,
    }
    assert_valid_report(doc)
    json_path = os.path.join(out_dir, "report.json")
    write_json(json_path, doc)
    md_path = os.path.join(out_dir, "report.md")
    with open(md_path, "w", encoding="utf-8") as f:
        f.write(render_md(doc))
    return paths + [json_path, md_path]


def run_pipeline(cfg: ExperimentConfig, command: str = "verify",
                 out_dir: Optional[str] = None) -> Tuple[int, List[str]]:
    """Run ``profile``, ``evolve`` or ``verify``; returns (status, written paths), status 1 when a gated check fails."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    out_dir = out_dir or cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    setup = prepare(cfg)
    paths = write_profile(cfg, setup, out_dir)
    status = 0
    if command in ("evolve", "verify"):
        run = simulate(cfg, setup)
        paths += write_evolution(cfg, setup, run, out_dir)
        if command == "verify":
            ctx = envelope_context(cfg, setup)
            report = verify_run(cfg, setup, run, ctx, cfg.output.threads)
            paths += write_report(cfg, setup, run, ctx, report, out_dir)
            status = 0 if report.passed else 1
            log.info("verification %s", "passed" if report.passed else "FAILED")
    return status, _finish(cfg, out_dir, paths)


# certificates


def expand_ids(ids: Sequence[str]) -> List[List[str]]:
    """Group requested ids into certificate runs; the 3.19-3.24 estimates share one certificate."""
    unknown = [i for i in ids if i not in CERTIFICATE_IDS + GROUPED_IDS]
    if unknown:
        raise ConfigError(f"unknown certificate ids {unknown}; known: {list(CERTIFICATE_IDS + GROUPED_IDS)}")
    groups: List[List[str]] = []
    grouped = []
    for i in unique_preserve_order(ids):
        if i == "3.19-3.24":
            grouped.extend(GROUPED_IDS)
        elif i in GROUPED_IDS:
            grouped.append(i)
        else:
            groups.append([i])
    if grouped:
        groups.append([i for i in GROUPED_IDS if i in grouped])

    def position(group):
        return CERTIFICATE_IDS.index("3.19-3.24" if group[0] in GROUPED_IDS else group[0])

    return sorted(groups, key=position)


def certificate_context(cfg: ExperimentConfig):
    cc = cfg.certificates
    model = cc.model.build()
    check_smallness(model, [cc.amplitude], "certificate amplitude")
    dm, dp = endstate_data(model, "-"), endstate_data(model, "+")
    profile = solve_profile(model, cfg.mesh.halfwidth, cfg.mesh.points)
    b = cfg.bounds
    ctx = build_context(dm, dp, profile.decay_rate, b.C, b.M, b.eta, b.eta0)
    return model, dm, dp, profile, ctx


def run_certificate_group(ids: List[str], cfg: ExperimentConfig, ctx: EnvelopeContext, dm: EndstateData,
                          forcing: NonlinearityTemplate, initial: NonlinearityTemplate,
                          settings: QuadratureSettings) -> InequalityCertificate:
    cc = cfg.certificates
    threads = cfg.output.threads
    head = ids[0]
    if head in GROUPED_IDS:
        return certify_lemma34(ctx, forcing, ids, cc.amplitude, settings, threads, cc.t_max)
    if head in LEMMA32_IDS:
        return certify_lemma32(ctx, initial, ids, settings, threads, cc.t_max)
    if head == "3.17":
        return certify_lemma33(ctx, initial, settings, threads, cc.t_max)
    if head in LEMMA35_IDS:
        return certify_lemma35(ctx, head, forcing, cc.amplitude, settings, threads, cc.t_max)
    if head == "4.38":
        if not len(ctx.outgoing_minus):
            raise ConfigError("the interaction identity needs an outgoing mode on the left")
        gamma = 0.5 * float(dm.gamma[int(ctx.outgoing_minus[0])])
        return liu_integration_by_parts_check(ctx, gamma, cc.amplitude, cc.identity_points, cc.seed, settings,
                                              threads, cc.t_max)
    raise ConfigError(f"unknown certificate id {head!r}")


def run_certificates(cfg: ExperimentConfig, ids: Optional[Sequence[str]] = None,
                     out_dir: Optional[str] = None) -> Tuple[int, List[str]]:
    """One certificate per requested id (grouped ids merged); returns (status, written paths), status 0 when all pass."""
    cc = cfg.certificates
    groups = expand_ids(ids or cc.ids)
    out_dir = out_dir or cfg.output.directory
    model, dm, dp, profile, ctx = certificate_context(cfg)
    settings = QuadratureSettings(panels=cc.panels, rel_tol=cc.rel_tol, max_levels=cc.max_levels)
    masses = {m: cc.amplitude for m in outgoing_modes(dm, dp)}
    forcing = NonlinearityTemplate("phi_forcing", ctx,
                                   forcing=forcing_residual(model, profile, build_wave_set(dm, dp, masses)))
    initial = initial_data_template(ctx, cc.amplitude, default_direction(model), cc.dipole_center)

    paths, docs = [], []
    for group in groups:
        log.info("certifying %s", ", ".join(group))
        cert = run_certificate_group(group, cfg, ctx, dm, forcing, initial, settings)
        doc = cert.to_dict()
        assert_valid_certificate(doc)
        paths += cert.export(out_dir)
        docs.append(doc)
    summary = {"config_hash": cfg.digest(), "model": model.name, "certificates": docs,
               "passed": all(d["passed"] for d in docs)}
    md_path = os.path.join(out_dir, "certificates.md")
    with open(md_path, "w", encoding="utf-8") as f:
        f.write(render_md(summary))
    paths.append(md_path)
    return (0 if summary["passed"] else 1), _finish(cfg, out_dir, paths)
