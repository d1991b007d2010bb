from __future__ import annotations
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional
import logging
import os

import numpy as np
import yaml
from dotenv import load_dotenv

from .errors import ConfigError
from .evolution import CFL
from .kernel_quadrature import CERTIFICATE_IDS, GROUPED_IDS, T_CAP
from .schema import config_errors
from .systems import SystemModel, endstate_data, make_burgers, make_psystem
from .utils import config_hash

# Load .env once at import time
load_dotenv()

log = logging.getLogger(__name__)

PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")
PRESETS = ("burgers", "psystem")
SMALLNESS = 0.1


@dataclass
class ModelConfig:
    name: str = "burgers"
    gamma_gas: float = 2.0
    v_minus: float = 1.0
    v_plus: float = 2.0

    def build(self) -> SystemModel:
        if self.name == "burgers":
            return make_burgers()
        if self.name == "psystem":
            return make_psystem(self.gamma_gas, self.v_minus, self.v_plus)
        raise ConfigError(f"unknown model {self.name!r}")


@dataclass
class PerturbationSpec:
    shape: str = "gaussian"
    amplitude: float = 0.01
    center: float = -10.0
    width: float = 1.0
    direction: Optional[List[float]] = None  # defaults to u+ - u- normalized


@dataclass
class MeshConfig:
    halfwidth: float = 40.0
    points: int = 8001
    spacing: float = 0.05
    auto_extend: bool = True


@dataclass
class TimeConfig:
    t_end: float = 256.0
    dt: Optional[float] = None
    snapshot_base: float = 2**0.5
    flux: str = "llf"


@dataclass
class BoundsConfig:
    C: float = 1.0
    M: Optional[float] = None
    eta: Optional[float] = None
    eta0: Optional[float] = None


@dataclass
class VerificationConfig:
    fit_t_min: float = 10.0
    noise_floor: float = 1e-12
    lp_tolerance: float = 0.1
    ratio_slope_tolerance: float = 0.05
    refinement_check: bool = False
    green_sources: List[float] = field(default_factory=list)
    green_t_end: float = 30.0
    green_width: float = 0.5


@dataclass
class CertificateConfig:
    ids: List[str] = field(default_factory=lambda: list(CERTIFICATE_IDS))
    model: ModelConfig = field(default_factory=lambda: ModelConfig(name="psystem"))
    t_max: float = T_CAP
    amplitude: float = 0.01
    dipole_center: float = -10.0
    rel_tol: float = 0.05
    panels: int = 4
    max_levels: int = 5
    seed: int = 0
    identity_points: int = 50


def _env_threads() -> int:
    raw = os.getenv("SHOCKLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SHOCKLAB_THREADS must be an integer, got {raw!r}")


@dataclass
class OutputConfig:
    directory: str = field(default_factory=lambda: os.getenv("SHOCKLAB_OUT_DIR", "shock_out"))
    threads: int = field(default_factory=_env_threads)


@dataclass
class ExperimentConfig:
    name: str = "custom"
    model: ModelConfig = field(default_factory=ModelConfig)
    perturbation: List[PerturbationSpec] = field(default_factory=lambda: [PerturbationSpec()])
    mesh: MeshConfig = field(default_factory=MeshConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    certificates: CertificateConfig = field(default_factory=CertificateConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of everything that can change the numbers (output location and threads excluded)."""
        data = self.to_dict()
        data.pop("output")
        return config_hash(data)


def from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    errors = config_errors(data)
    if errors:
        raise ConfigError("invalid config: " + "; ".join(errors))

    certs = dict(data.get("certificates") or {})
    cert_model = ModelConfig(**(certs.pop("model", None) or {"name": "psystem"}))
    cfg = ExperimentConfig(
        name=data.get("name", "custom"),
        model=ModelConfig(**(data.get("model") or {})),
        perturbation=[PerturbationSpec(**p) for p in (data.get("perturbation") or [{}])],
        mesh=MeshConfig(**(data.get("mesh") or {})),
        time=TimeConfig(**(data.get("time") or {})),
        bounds=BoundsConfig(**(data.get("bounds") or {})),
        verification=VerificationConfig(**(data.get("verification") or {})),
        certificates=CertificateConfig(model=cert_model, **certs),
        output=OutputConfig(**(data.get("output") or {})),
    )
    unknown = [i for i in cfg.certificates.ids if i not in CERTIFICATE_IDS + GROUPED_IDS]
    if unknown:
        raise ConfigError(f"unknown certificate ids {unknown}; known: {list(CERTIFICATE_IDS + GROUPED_IDS)}")
    return cfg


def load_config(path: Optional[str]) -> ExperimentConfig:
    if not path:
        return ExperimentConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid JSON/YAML: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    log.debug("Loaded config from %s", path)
    return from_dict(data)


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")
    return load_config(os.path.join(PRESET_DIR, f"{name}.json"))


def check_smallness(model: SystemModel, amplitudes: List[float], what: str) -> None:
    jump = float(np.linalg.norm(model.u_plus - model.u_minus))
    total = float(sum(abs(a) for a in amplitudes))
    if total > SMALLNESS * jump * (1 + 1e-12):
        raise ConfigError(f"{what}: E0 = {total:g} exceeds {SMALLNESS}*|u+ - u-| = {SMALLNESS * jump:g}")


def validate_semantics(cfg: ExperimentConfig, model: SystemModel) -> None:
    """Smallness of the perturbation and CFL consistency of an explicit dt."""
    check_smallness(model, [p.amplitude for p in cfg.perturbation if p.shape != "shifted-profile"], "perturbation")
    if cfg.time.dt is not None:
        dm, dp = endstate_data(model, "-"), endstate_data(model, "+")
        amax = float(max(np.max(np.abs(dm.speeds)), np.max(np.abs(dp.speeds))))
        beta_min = float(min(np.min(dm.beta), np.min(dp.beta)))
        limit = min(CFL * cfg.mesh.spacing / amax, 2 * beta_min / amax**2)
        if cfg.time.dt > limit:
            raise ConfigError(f"dt={cfg.time.dt:g} is not CFL-consistent (limit {limit:.4g} for h={cfg.mesh.spacing:g})")
    if cfg.certificates.t_max > T_CAP:
        raise ConfigError(f"certificate horizon t_max={cfg.certificates.t_max:g} exceeds {T_CAP:g}")
