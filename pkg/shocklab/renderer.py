from __future__ import annotations
import json
import logging
import os
from typing import Dict, List, Sequence

import numpy as np

from .errors import ConfigError
from .utils import write_csv
from .verification import LP_PREDICTIONS

log = logging.getLogger(__name__)


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return "pass" if v else "FAIL"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _render_certificates(doc: Dict) -> List[str]:
    lines: List[str] = []
    lines.append(f"# Kernel certificates ({doc.get('model', 'unknown')})")
    lines.append("")
    lines.append("| certificate | estimate | rhs | sup ratio | refined | delta | result |")
    lines.append("|---|---|---|---|---|---|---|")
    for cert in doc.get("certificates", []):
        for e in cert.get("estimates", []):
            lines.append(
                f"| {cert['id']} | {e['estimate']} | `{e['rhs']}` | {_fmt(e['sup_ratio'])} "
                f"| {_fmt(e['refined_sup_ratio'])} | {_fmt(e.get('refinement_delta'))} | {_fmt(e['passed'])} |"
            )
    lines.append("")
    lines.append(f"Overall: {_fmt(doc.get('passed', False))}")
    return lines


def _render_report(doc: Dict) -> List[str]:
    model = doc.get("model") or {}
    ver = doc.get("verification") or {}
    lines: List[str] = []
    lines.append(f"# {doc.get('name') or 'Experiment'}: {model.get('name', 'unknown')} "
                 f"({model.get('classification', '?')} shock)")
    lines.append("")
    lines.append(f"Config hash `{doc.get('config_hash', '')}`")
    lines.append("")

    dec = doc.get("decomposition") or {}
    if dec:
        lines.append("Mass decomposition:")
        lines.append(f"- delta* = {_fmt(dec.get('delta_star'))}")
        for mode, m in (dec.get("masses") or {}).items():
            lines.append(f"- m_{mode} = {_fmt(m)}")
        lines.append("")

    lp = ver.get("lp") or {}
    if lp:
        lines.append("**Decay exponents**")
        lines.append("| residual | p | fitted | 95% CI | predicted | result |")
        lines.append("|---|---|---|---|---|---|")
        for variant, fits in lp.items():
            for p, fit in fits.items():
                note = " (noise floor)" if fit.get("at_noise_floor") else ""
                lines.append(f"| {variant} | {p} | {_fmt(fit.get('exponent'))} | {_fmt(fit.get('ci'))} "
                             f"| {_fmt(fit.get('prediction'))} | {_fmt(fit.get('passed'))}{note} |")
        lines.append("")

    shift = ver.get("shift") or {}
    if shift:
        lines.append("**Shift**")
        for key, fit in shift.items():
            lines.append(f"- |{key}|: exponent {_fmt(fit.get('exponent'))}, predicted {_fmt(fit.get('prediction'))}"
                         f" -> {_fmt(fit.get('passed'))}")
        lines.append("")

    checks = ver.get("checks") or {}
    if checks:
        lines.append("**Checks**")
        for name, ok in checks.items():
            lines.append(f"- {name}: {_fmt(ok)}")
        lines.append("")

    if (ver.get("pointwise") or {}).get("fallback_envelope"):
        lines.append("Note: no outgoing modes, ratios use the fallback envelope.")
        lines.append("")
    lines.append(f"Overall: {_fmt(doc.get('passed', False))}")
    return lines


def render_md(doc: Dict) -> str:
    lines = _render_certificates(doc) if "certificates" in doc else _render_report(doc)
    return "\n".join(lines) + "\n"


# plot data


def _load(path: str) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read report {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"report {path} must be a JSON object")
    return doc


def _decay_files(doc: Dict, out_dir: str, stem: str) -> List[str]:
    """One file per p: t, each residual's norm, and the predicted slope anchored at the first point."""
    norms = doc.get("norms") or {}
    if not norms:
        return []
    variants = list(norms)
    times = np.asarray(norms[variants[0]]["times"], dtype=float)
    live = times > 0
    written = []
    for p in ("1", "2", "inf"):
        if not all(p in norms[v] for v in variants):
            continue
        cols, names = [times[live]], ["t"]
        for v in variants:
            series = np.asarray(norms[v][p], dtype=float)[live]
            prediction = LP_PREDICTIONS.get(v, {}).get(p)
            cols.append(series)
            names.append(v)
            if prediction is not None and len(series):
                anchor = series[0] * (1 + times[live][0]) ** -prediction
                cols.append(anchor * (1 + times[live]) ** prediction)
                names.append(f"{v}_reference")
        path = os.path.join(out_dir, f"{stem}_decay_L{p}.dat")
        write_csv(path, names, np.column_stack(cols))
        written.append((path, names))
    script = os.path.join(out_dir, f"{stem}_decay.gp")
    with open(script, "w", encoding="utf-8") as f:
        f.write("set datafile separator ','\nset logscale xy\nset key autotitle columnhead\n")
        for path, names in written:
            style = ["lines dt 2" if "reference" in n else "linespoints" for n in names]
            plots = ", ".join(f"'{os.path.basename(path)}' using 1:{k + 1} with {style[k]}" for k in range(1, len(names)))
            f.write(f"set title '{os.path.basename(path)}'\nplot {plots}\npause -1\n")
    return [path for path, _ in written] + [script]


def _series_file(series: Dict, path: str) -> List[str]:
    times, ratio = series.get("times") or [], series.get("ratio") or []
    if not times:
        return []
    values = [np.nan if r is None else r for r in ratio]
    write_csv(path, ["t", "ratio"], np.column_stack([times, values]))
    return [path]


def _heat_map(doc: Dict, report_dir: str, path: str) -> List[str]:
    """Gnuplot pm3d layout: blocks of constant t separated by blank lines."""
    name = (doc.get("artifacts") or {}).get("envelope_ratio")
    if not name:
        return []
    source = os.path.join(report_dir, name)
    if not os.path.exists(source):
        raise ConfigError(f"envelope ratio data {source} referenced by the report is missing")
    rows = np.loadtxt(source, delimiter=",", skiprows=1, ndmin=2)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# x t ratio\n")
        for t in np.unique(rows[:, 1]):
            for x, _, r in rows[rows[:, 1] == t]:
                f.write(f"{x:.10g} {t:.10g} {r:.10g}\n")
            f.write("\n")
    return [path]


def emit_plots(report_paths: Sequence[str], out_dir: str) -> List[str]:
    """Write gnuplot-ready data for every report: decay curves, ratio series, heat map, shift track."""
    os.makedirs(out_dir, exist_ok=True)
    paths: List[str] = []
    for rp in report_paths:
        doc = _load(rp)
        stem = os.path.splitext(os.path.basename(rp))[0]
        written = _decay_files(doc, out_dir, stem)
        ver = doc.get("verification") or {}
        for key in ("pointwise", "derivative", "zeta"):
            written += _series_file(ver.get(key) or {}, os.path.join(out_dir, f"{stem}_ratio_{key}.dat"))
        written += _heat_map(doc, os.path.dirname(os.path.abspath(rp)), os.path.join(out_dir, f"{stem}_heatmap.dat"))
        track = doc.get("shift_track") or {}
        if track.get("times"):
            path = os.path.join(out_dir, f"{stem}_shift.dat")
            write_csv(path, ["t", "delta", "delta_dot"],
                      np.column_stack([track["times"], track["delta"], track["delta_dot"]]))
            written.append(path)
        if not written:
            log.warning("report %s has no plottable series", rp)
        paths.extend(written)
    if not paths:
        log.warning("no plot data written")
    return paths
