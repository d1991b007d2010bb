"""Config loading, schema validation and semantic checks."""
import json

import pytest

from shocklab.config import (ExperimentConfig, _env_threads, check_smallness, from_dict, load_config, load_preset,
                             validate_semantics)
from shocklab.errors import ConfigError
from shocklab.schema import config_errors, is_valid_config


class TestPresets:
    @pytest.mark.parametrize("name", ["burgers", "psystem"])
    def test_presets_load(self, name):
        cfg = load_preset(name)
        assert cfg.name == name
        assert cfg.model.name == name

    def test_psystem_preset(self):
        cfg = load_preset("psystem")
        assert cfg.mesh.halfwidth == 60.0
        assert cfg.verification.refinement_check

    @pytest.mark.parametrize("name", ["burgers", "psystem"])
    def test_presets_run_llf_to_t1000(self, name):
        cfg = load_preset(name)
        assert cfg.time.t_end == 1000.0
        assert cfg.time.flux == "llf"

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_preset("euler")


class TestSchema:
    def test_defaults_are_valid(self):
        assert is_valid_config({})
        assert is_valid_config(json.loads(json.dumps({"model": {"name": "psystem", "v_plus": 3.0}})))

    def test_error_path(self):
        errors = config_errors({"mesh": {"points": "many"}})
        assert len(errors) == 1
        assert errors[0].startswith("mesh/points:")

    def test_unknown_key(self):
        assert not is_valid_config({"meshes": {}})

    def test_bad_flux(self):
        with pytest.raises(ConfigError, match="time/flux"):
            from_dict({"time": {"flux": "roe"}})

    def test_unknown_certificate_id(self):
        with pytest.raises(ConfigError):
            from_dict({"certificates": {"ids": ["3.99"]}})


class TestLoadConfig:
    def test_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("name: small\nmodel:\n  name: burgers\ntime:\n  t_end: 8\n  flux: llf\n")
        cfg = load_config(str(path))
        assert cfg.name == "small"
        assert cfg.time.t_end == 8
        assert cfg.time.flux == "llf"
        assert cfg.certificates.model.name == "psystem"

    def test_no_path_gives_defaults(self):
        assert load_config(None).model.name == "burgers"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nope.yaml"))

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("model: [burgers\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_top_level_list(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- burgers\n- psystem\n")
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestSemantics:
    def test_smallness(self, burgers):
        check_smallness(burgers, [0.2], "perturbation")
        with pytest.raises(ConfigError):
            check_smallness(burgers, [0.15, 0.1], "perturbation")

    def test_large_perturbation_rejected(self, burgers):
        cfg = from_dict({"perturbation": [{"shape": "gaussian", "amplitude": 0.5}]})
        with pytest.raises(ConfigError):
            validate_semantics(cfg, burgers)

    def test_shifted_profile_is_exempt(self, burgers):
        cfg = from_dict({"perturbation": [{"shape": "shifted-profile", "amplitude": 0.5}]})
        validate_semantics(cfg, burgers)

    def test_dt_cfl(self, burgers):
        # |a| = 1 at both endstates, h = 0.05
        validate_semantics(from_dict({"time": {"dt": 0.01}}), burgers)
        with pytest.raises(ConfigError):
            validate_semantics(from_dict({"time": {"dt": 0.05}}), burgers)

    def test_certificate_horizon(self, burgers):
        with pytest.raises(ConfigError):
            validate_semantics(from_dict({"certificates": {"t_max": 200.0}}), burgers)


class TestDigestAndEnvironment:
    def test_digest_ignores_output(self):
        a = from_dict({"output": {"directory": "a"}})
        b = from_dict({"output": {"directory": "b"}})
        assert a.digest() == b.digest()
        assert a.digest() != from_dict({"time": {"t_end": 100.0}}).digest()

    def test_threads_from_environment(self, monkeypatch):
        monkeypatch.setenv("SHOCKLAB_THREADS", "3")
        assert _env_threads() == 3
        assert ExperimentConfig().output.threads == 3

    def test_bad_threads(self, monkeypatch):
        monkeypatch.setenv("SHOCKLAB_THREADS", "lots")
        with pytest.raises(ConfigError):
            _env_threads()

    def test_out_dir_from_environment(self, monkeypatch):
        monkeypatch.setenv("SHOCKLAB_OUT_DIR", "elsewhere")
        assert ExperimentConfig().output.directory == "elsewhere"
