"""Tests for configuration helpers."""

import json
from pathlib import Path

import pytest

from face_relief.config import (
    DEFAULT_W1,
    CalibrationSettings,
    PipelineConfig,
    RefinementConfig,
    parse_light_subset,
)
from face_relief.errors import ConfigError, MissingPathError


def test_light_subsets_parse_to_zero_based_indices():
    assert parse_light_subset("S123") == [0, 1, 2]
    assert parse_light_subset("s31") == [0, 2]
    assert parse_light_subset(" S2 ") == [1]


@pytest.mark.parametrize("bad", ["", "S", "S0", "123", "S1a", "S11"])
def test_bad_light_subsets_rejected(bad):
    with pytest.raises(ConfigError):
        parse_light_subset(bad)


def test_refinement_weights_must_be_non_negative():
    with pytest.raises(ConfigError):
        RefinementConfig(mu1=-0.1)
    with pytest.raises(ConfigError):
        RefinementConfig(mu2=float("nan"))


def test_load_reads_nested_sections(tmp_path):
    path = tmp_path / "relief.json"
    path.write_text(
        json.dumps(
            {
                "paths": {"model": "toy.bin", "corpus": "bench"},
                "integration": {"w1": 0.5, "settings": {"max_iters": 7}},
                "refinement": {"mu1": 0.2},
                "calibration": {"min_triangles": 10, "unknown": 1},
                "light_subset": "S13",
            }
        )
    )
    cfg = PipelineConfig.load(path)
    assert cfg.model_path == Path("toy.bin")
    assert cfg.corpus_dir == Path("bench")
    assert cfg.w1 == 0.5
    assert cfg.integration.max_iters == 7
    assert cfg.refinement.mu1 == 0.2
    assert cfg.calibration == CalibrationSettings(min_triangles=10)
    assert cfg.light_subset == "S13"


def test_to_dict_round_trips():
    cfg = PipelineConfig(w2=0.01, light_subset="S2", sample={"n_lights": 4})
    again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


def test_missing_config_file_names_the_path(tmp_path):
    with pytest.raises(MissingPathError) as exc:
        PipelineConfig.load(tmp_path / "nope.json")
    assert "nope.json" in str(exc.value)


def test_invalid_json_is_a_config_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        PipelineConfig.load(path)


def test_env_overrides_file_values(tmp_path, monkeypatch):
    path = tmp_path / "relief.json"
    path.write_text(json.dumps({"light_subset": "S1", "integration": {"w2": 0.5}}))
    monkeypatch.setenv("RELIEF_LIGHT_SUBSET", "S23")
    monkeypatch.setenv("RELIEF_W2", "0.25")
    monkeypatch.setenv("RELIEF_MU1", "0.3")
    monkeypatch.setenv("RELIEF_CORPUS_DIR", str(tmp_path / "c"))
    monkeypatch.setenv("RELIEF_JOBS", "3")
    cfg = PipelineConfig.load(path)
    assert cfg.light_subset == "S23"
    assert cfg.w2 == 0.25
    assert cfg.refinement.mu1 == 0.3
    assert cfg.corpus_dir == tmp_path / "c"
    assert cfg.jobs == 3
    cfg.validate()


def test_invalid_env_value_parsed_safely_until_validation(monkeypatch):
    monkeypatch.setenv("RELIEF_W1", "not-a-float")
    cfg = PipelineConfig.load()
    assert cfg.w1 == DEFAULT_W1
    with pytest.raises(ConfigError) as exc:
        cfg.validate()
    assert "RELIEF_W1" in str(exc.value)
    assert "not-a-float" in str(exc.value)


def test_invalid_numeric_parse_errors_are_deterministic(monkeypatch):
    monkeypatch.setenv("RELIEF_W1", "bad-float")
    monkeypatch.setenv("RELIEF_JOBS", "bad-int")
    cfg = PipelineConfig.load()
    with pytest.raises(ConfigError) as exc:
        cfg.validate()
    assert str(exc.value) == (
        "Invalid numeric environment variable value(s): "
        "RELIEF_W1='bad-float', RELIEF_JOBS='bad-int'"
    )


def test_negative_env_weight_recorded_as_parse_error(monkeypatch):
    monkeypatch.setenv("RELIEF_MU2", "-1")
    cfg = PipelineConfig.load()
    with pytest.raises(ConfigError, match="RELIEF_MU1/RELIEF_MU2"):
        cfg.validate()


def test_validate_checks_ranges():
    with pytest.raises(ConfigError):
        PipelineConfig(jobs=0).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(w1=-1.0).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(light_subset="S4x").validate()
    with pytest.raises(ConfigError):
        PipelineConfig(schema_version=2).validate()


def test_validate_requires_existing_paths(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig().validate(require_model=True)
    with pytest.raises(MissingPathError):
        PipelineConfig(model_path=tmp_path / "model.bin").validate(require_model=True)
    with pytest.raises(MissingPathError):
        PipelineConfig(corpus_dir=tmp_path / "none").validate(require_corpus=True)
    PipelineConfig(corpus_dir=tmp_path).validate(require_corpus=True)
