from __future__ import annotations

import hashlib
import json
import os
import platform
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np
import scipy


def geometric_times(t_end: float, base: float = 2**0.5, t_min: float = 0.5) -> np.ndarray:
    """base^k for every integer k with t_min <= base^k <= t_end."""
    if base <= 1:
        raise ValueError(f"snapshot base must exceed 1, got {base}")
    k_lo = int(np.ceil(np.log(t_min) / np.log(base) - 1e-9))
    k_hi = int(np.floor(np.log(t_end) / np.log(base) + 1e-9))
    return base ** np.arange(k_lo, k_hi + 1, dtype=float)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def write_csv(path: str, columns: Sequence[str], rows: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(rows), delimiter=",", header=",".join(columns), comments="")


def write_json(path: str, doc: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def runtime_versions() -> Dict[str, str]:
    from . import __version__

    return {
        "shocklab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def manifest(config_digest: str, paths: Iterable[str], directory: str) -> Dict[str, Any]:
    return {
        "config_hash": config_digest,
        "versions": runtime_versions(),
        "artifacts": sorted(os.path.relpath(p, directory) for p in paths),
    }


def unique_preserve_order(items: Iterable[str]) -> List[str]:
    seen = set()
    out: List[str] = []
    for it in items:
        if it not in seen:
            seen.add(it)
            out.append(it)
    return out


def finite_or_none(value: float):
    """JSON has no NaN/inf; report them as null."""
    value = float(value)
    return value if np.isfinite(value) else None
