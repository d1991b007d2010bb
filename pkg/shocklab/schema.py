from __future__ import annotations
from typing import Any, Dict, List

from jsonschema import validate, Draft7Validator

NUMBER = {"type": "number"}
NULLABLE_NUMBER = {"type": ["number", "null"]}
POSITIVE = {"type": "number", "exclusiveMinimum": 0}

MODEL_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "enum": ["burgers", "psystem"]},
        "gamma_gas": POSITIVE,
        "v_minus": POSITIVE,
        "v_plus": POSITIVE,
    },
}

CONFIG_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "model": MODEL_SCHEMA,
        "perturbation": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["shape"],
                "additionalProperties": False,
                "properties": {
                    "shape": {"type": "string", "enum": ["gaussian", "dipole", "shifted-profile"]},
                    "amplitude": NUMBER,
                    "center": NUMBER,
                    "width": POSITIVE,
                    "direction": {"type": ["array", "null"], "items": NUMBER},
                },
            },
        },
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "halfwidth": POSITIVE,
                "points": {"type": "integer", "minimum": 16},
                "spacing": POSITIVE,
                "auto_extend": {"type": "boolean"},
            },
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_end": POSITIVE,
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "snapshot_base": {"type": "number", "exclusiveMinimum": 1},
                "flux": {"type": "string", "enum": ["central", "llf"]},
            },
        },
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "C": POSITIVE,
                "M": NULLABLE_NUMBER,
                "eta": NULLABLE_NUMBER,
                "eta0": NULLABLE_NUMBER,
            },
        },
        "verification": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fit_t_min": POSITIVE,
                "noise_floor": POSITIVE,
                "lp_tolerance": POSITIVE,
                "ratio_slope_tolerance": POSITIVE,
                "refinement_check": {"type": "boolean"},
                "green_sources": {"type": "array", "items": NUMBER},
                "green_t_end": POSITIVE,
                "green_width": POSITIVE,
            },
        },
        "certificates": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ids": {"type": "array", "items": {"type": "string"}},
                "model": MODEL_SCHEMA,
                "t_max": {"type": "number", "exclusiveMinimum": 0, "maximum": 100},
                "amplitude": POSITIVE,
                "dipole_center": NUMBER,
                "rel_tol": POSITIVE,
                "panels": {"type": "integer", "minimum": 1},
                "max_levels": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "identity_points": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "threads": {"type": "integer", "minimum": 1},
            },
        },
    },
}

FIT_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["exponent", "passed"],
    "properties": {
        "exponent": NULLABLE_NUMBER,
        "ci": NULLABLE_NUMBER,
        "prediction": NULLABLE_NUMBER,
        "at_noise_floor": {"type": "boolean"},
        "passed": {"type": "boolean"},
    },
}

SERIES_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["times", "ratio", "bounded"],
    "properties": {
        "times": {"type": "array", "items": NUMBER},
        "ratio": {"type": "array", "items": NULLABLE_NUMBER},
        "bounded": {"type": "boolean"},
        "fallback_envelope": {"type": "boolean"},
    },
}

REPORT_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["config_hash", "model", "decomposition", "verification", "passed"],
    "properties": {
        "config_hash": {"type": "string"},
        "name": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["name", "n", "shock_speed", "classification"],
        },
        "decomposition": {
            "type": "object",
            "required": ["excess_mass", "masses", "delta_star"],
        },
        "verification": {
            "type": "object",
            "required": ["pointwise", "lp", "shift", "checks", "passed"],
            "properties": {
                "pointwise": SERIES_SCHEMA,
                "derivative": SERIES_SCHEMA,
                "zeta": SERIES_SCHEMA,
                "lp": {
                    "type": "object",
                    "additionalProperties": {"type": "object", "additionalProperties": FIT_SCHEMA},
                },
                "shift": {"type": "object", "additionalProperties": FIT_SCHEMA},
                "checks": {"type": "object", "additionalProperties": {"type": "boolean"}},
                "passed": {"type": "boolean"},
            },
        },
        "passed": {"type": "boolean"},
    },
}

CERTIFICATE_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["id", "estimates", "sup_ratio", "passed"],
    "properties": {
        "id": {"type": "string"},
        "grid": {"type": "object"},
        "sup_ratio": NULLABLE_NUMBER,
        "refinement_delta": NULLABLE_NUMBER,
        "passed": {"type": "boolean"},
        "estimates": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["estimate", "rhs", "sup_ratio", "refined_sup_ratio", "passed"],
                "properties": {
                    "estimate": {"type": "string"},
                    "rhs": {"type": "string"},
                    "points": {"type": "integer"},
                    "sup_ratio": NULLABLE_NUMBER,
                    "refined_sup_ratio": NULLABLE_NUMBER,
                    "refinement_delta": NULLABLE_NUMBER,
                    "coverage": {"type": "object", "additionalProperties": {"type": "boolean"}},
                    "passed": {"type": "boolean"},
                },
            },
        },
    },
}

MANIFEST_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["config_hash", "versions", "artifacts"],
    "properties": {
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "versions": {"type": "object", "additionalProperties": {"type": "string"}},
        "artifacts": {"type": "array", "items": {"type": "string"}},
    },
}


def config_errors(obj: Dict[str, Any]) -> List[str]:
    """Human-readable schema violations, each prefixed with its JSON path."""
    v = Draft7Validator(CONFIG_SCHEMA)
    out = []
    for err in sorted(v.iter_errors(obj), key=lambda e: list(e.absolute_path)):
        path = "/".join(str(p) for p in err.absolute_path) or "(root)"
        out.append(f"{path}: {err.message}")
    return out


def is_valid_config(obj: Dict[str, Any]) -> bool:
    return Draft7Validator(CONFIG_SCHEMA).is_valid(obj)


def is_valid_report(obj: Dict[str, Any]) -> bool:
    v = Draft7Validator(REPORT_SCHEMA)
    return v.is_valid(obj)


def assert_valid_report(obj: Dict[str, Any]) -> None:
    validate(obj, REPORT_SCHEMA)


def is_valid_certificate(obj: Dict[str, Any]) -> bool:
    v = Draft7Validator(CERTIFICATE_SCHEMA)
    return v.is_valid(obj)


def assert_valid_certificate(obj: Dict[str, Any]) -> None:
    validate(obj, CERTIFICATE_SCHEMA)


def assert_valid_manifest(obj: Dict[str, Any]) -> None:
    validate(obj, MANIFEST_SCHEMA)
