"""Markdown summaries and gnuplot data files."""
import json

from shocklab.renderer import emit_plots, render_md

REPORT = {
    "name": "psystem",
    "config_hash": "abc123",
    "model": {"name": "psystem", "classification": "lax"},
    "decomposition": {"delta_star": -0.0123, "masses": {"-1": 0.004}},
    "verification": {
        "lp": {"theorem": {"2": {"exponent": -0.52, "ci": 0.01, "prediction": -0.5, "passed": True}}},
        "shift": {"delta": {"exponent": -0.61, "prediction": -0.5, "passed": True}},
        "checks": {"pointwise_bounded": True, "delta_rate": False},
        "pointwise": {"times": [1.0, 2.0, 4.0], "ratio": [0.2, 0.25, None], "fallback_envelope": False},
    },
    "norms": {
        "theorem": {"times": [0.0, 1.0, 3.0], "1": [0.1, 0.08, 0.06], "2": [0.05, 0.03, 0.02],
                    "inf": [0.04, 0.02, 0.01]},
    },
    "shift_track": {"times": [0.0, 1.0], "delta": [0.0, 0.01], "delta_dot": [0.02, 0.005]},
    "passed": False,
}

CERTIFICATES = {
    "model": "psystem",
    "certificates": [{"id": "3.17", "estimates": [
        {"estimate": "3.17", "rhs": "E0 e^{-theta t}(1+|x|)^-3/2", "sup_ratio": 2.5, "refined_sup_ratio": 2.51,
         "refinement_delta": 0.004, "passed": True}]}],
    "passed": True,
}


class TestRenderMd:
    def test_report(self):
        md = render_md(REPORT)
        assert md.startswith("# psystem: psystem (lax shock)")
        assert "- delta* = -0.0123" in md
        assert "| theorem | 2 | -0.52 | 0.01 | -0.5 | pass |" in md
        assert "- delta_rate: FAIL" in md
        assert md.rstrip().endswith("Overall: FAIL")

    def test_fallback_note(self):
        doc = {"verification": {"pointwise": {"fallback_envelope": True}}}
        assert "fallback envelope" in render_md(doc)

    def test_certificates(self):
        md = render_md(CERTIFICATES)
        assert md.startswith("# Kernel certificates (psystem)")
        assert "| 3.17 | 3.17 | `E0 e^{-theta t}(1+|x|)^-3/2` | 2.5 | 2.51 | 0.004 | pass |" in md


class TestEmitPlots:
    def test_report_series(self, tmp_path):
        report = tmp_path / "report.json"
        report.write_text(json.dumps(REPORT))
        paths = emit_plots([str(report)], str(tmp_path / "plots"))
        names = {p.rsplit("/", 1)[-1] for p in paths}
        assert {"report_decay_L1.dat", "report_decay_L2.dat", "report_decay_Linf.dat", "report_decay.gp",
                "report_ratio_pointwise.dat", "report_shift.dat"} == names

    def test_decay_file_drops_time_zero(self, tmp_path):
        report = tmp_path / "report.json"
        report.write_text(json.dumps(REPORT))
        emit_plots([str(report)], str(tmp_path))
        lines = (tmp_path / "report_decay_L2.dat").read_text().splitlines()
        assert lines[0] == "t,theorem,theorem_reference"
        assert len(lines) == 3
