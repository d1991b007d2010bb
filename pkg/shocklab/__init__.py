"""Numerical lab for viscous shock profiles: profiles, diffusion waves, evolution and kernel certificates."""

__all__ = [
    "__version__",
    "load_config",
    "load_preset",
    "run_pipeline",
    "run_certificates",
]

__version__ = "0.1.0"

from .config import load_config, load_preset  # noqa: E402
from .pipeline import run_certificates, run_pipeline  # noqa: E402
