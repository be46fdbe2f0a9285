"""Config parsing, metric serialization, feature export, scenario artifacts."""

import json

import numpy as np
import pytest

from hijacklab import experiments, models
from hijacklab.experiments import (ConfigError, ExperimentConfig, MetricsRecord,
                                   TaskSpec)


def tiny_config_dict(scenario="clean", **top):
    """A configuration small enough for test-speed end-to-end runs."""
    raw = {
        "scenario": scenario,
        "fl": {"n": 4, "m": 2, "rounds": 4, "eta": 2.0, "local_lr": 0.1,
               "local_epochs": 1, "batch_size": 16, "master_seed": 0},
        "attack": {"alpha": 0.6, "lam": 1.0, "anchor_iters": 600,
                   "anchor_lr": 1.0, "confidence_threshold": 0.99,
                   "anchor_restarts": 6, "cloak_iters": 30, "cloak_lr": 0.1,
                   "batch_size": 8, "seed": 3},
        "task": {"original_classes": 4, "original_samples_per_class": 30,
                 "original_shape": [3, 4, 4], "original_separation": 1.5,
                 "original_noise_sigma": 10.0, "original_background_sigma": 40.0,
                 "original_seed": 101, "original_test_fraction": 0.2,
                 "original_split_seed": 202, "hijack_classes": 3,
                 "hijack_samples_per_class": 10, "hijack_separation": 1.5,
                 "hijack_noise_sigma": 10.0, "hijack_seed": 505,
                 "hijack_test_fraction": 0.25, "hijack_split_seed": 606,
                 "partition_seed": 303, "hidden_widths": [16, 8],
                 "model_seed": 404},
        "hijack_round": 2,
        "seeds": [0],
    }
    raw.update(top)
    return raw


def test_config_roundtrip():
    cfg = experiments.parse_config_dict(tiny_config_dict())
    again = experiments.parse_config_dict(json.loads(
        experiments.serialize_config(cfg)))
    assert again == cfg


def test_parse_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(experiments.serialize_config(
        experiments.parse_config_dict(tiny_config_dict())))
    cfg = experiments.parse_config(path)
    assert cfg.scenario == "clean"
    assert cfg.fl.n == 4
    assert cfg.task.hidden_widths == (16, 8)


def test_parse_config_invalid_json_names_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"scenario": "clean",\n  broken}')
    with pytest.raises(ConfigError, match="line 2"):
        experiments.parse_config(path)


def test_parse_rejects_non_object(tmp_path):
    path = tmp_path / "arr.json"
    path.write_text("[1, 2, 3]")
    with pytest.raises(ConfigError, match="object"):
        experiments.parse_config(path)


def test_parse_requires_scenario():
    with pytest.raises(ConfigError, match="scenario"):
        experiments.parse_config_dict({"seeds": [0]})


def test_parse_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="learning_rate"):
        experiments.parse_config_dict(tiny_config_dict(learning_rate=0.1))
    raw = tiny_config_dict()
    raw["fl"]["momentum"] = 0.9
    with pytest.raises(ConfigError, match="'fl'.*momentum"):
        experiments.parse_config_dict(raw)


def test_parse_rejects_non_mapping_section():
    with pytest.raises(ConfigError, match="mapping"):
        experiments.parse_config_dict(tiny_config_dict(fl=[1, 2]))


def test_parse_reports_section_value_errors():
    raw = tiny_config_dict()
    raw["fl"]["m"] = 10  # more participants than clients
    with pytest.raises(ConfigError, match="'fl'"):
        experiments.parse_config_dict(raw)


def test_unknown_scenario_lists_choices():
    with pytest.raises(ConfigError, match="clean.*defenses"):
        experiments.parse_config_dict(tiny_config_dict(scenario="steal"))


def test_hijack_round_bounds_checked():
    with pytest.raises(ConfigError, match="hijack_round 9"):
        experiments.parse_config_dict(tiny_config_dict(hijack_round=9))
    with pytest.raises(ConfigError, match="hijack_round_grid"):
        experiments.parse_config_dict(
            tiny_config_dict(scenario="hijack_round_sweep",
                             hijack_round_grid=[1, 99]))


def test_empty_seeds_rejected():
    with pytest.raises(ConfigError, match="seeds"):
        experiments.parse_config_dict(tiny_config_dict(seeds=[]))


def test_task_spec_budget():
    with pytest.raises(ValueError):
        TaskSpec(original_classes=5, hijack_classes=5)


# -- metrics -------------------------------------------------------------------


def test_metrics_record_validation():
    with pytest.raises(ValueError):
        MetricsRecord("clean", "clean", 0, "final", 1.5, 0.0)
    with pytest.raises(ValueError):
        MetricsRecord("clean", "clean", 0, "final", 0.5, -0.1)


def test_records_csv_schema_and_blanks():
    records = [
        MetricsRecord("s", "hijackfl", 0, "final", 0.5, 0.25, {"alpha": 0.6}),
        MetricsRecord("s", "clean", 1, "3", 1.0, 0.0, {"beta": "x"}),
    ]
    lines = experiments.records_csv(records).strip().split("\n")
    assert lines[0] == "scenario,method,seed,round,utility,asr,alpha,beta"
    assert lines[1] == "s,hijackfl,0,final,0.500000,0.250000,0.6,"
    assert lines[2] == "s,clean,1,3,1.000000,0.000000,,x"


# -- feature export ------------------------------------------------------------


def _export_world():
    params = models.init_model(models.ModelSpec(10, (8, 6), 3), seed=0)
    rng = np.random.default_rng(1)
    groups = {"a": rng.uniform(0, 255, size=(20, 10)),
              "b": rng.uniform(0, 255, size=(15, 10))}
    return params, groups


def test_export_features_shape_and_grouping():
    params, groups = _export_world()
    rows = experiments.export_features(params, groups)
    assert len(rows) == 35
    assert [name for name, _, _ in rows[:20]] == ["a"] * 20
    assert [name for name, _, _ in rows[20:]] == ["b"] * 15


def test_export_features_is_centered_and_ordered():
    params, groups = _export_world()
    rows = experiments.export_features(params, groups)
    xy = np.array([[x, y] for _, x, y in rows])
    assert np.allclose(xy.mean(axis=0), 0.0, atol=1e-9)
    # first principal component carries at least as much variance
    assert xy[:, 0].var() >= xy[:, 1].var()


def test_export_features_deterministic():
    params, groups = _export_world()
    assert experiments.export_features(params, groups) == \
        experiments.export_features(params, groups)


def test_export_features_requires_groups():
    params, groups = _export_world()
    with pytest.raises(ValueError):
        experiments.export_features(params, {"a": groups["a"]})


def test_features_csv_format():
    text = experiments.features_csv([("a", 1.25, -0.5)])
    assert text == "group,x,y\na,1.250000,-0.500000\n"


# -- scenario execution --------------------------------------------------------


def test_clean_scenario_artifacts_are_byte_reproducible(tmp_path, monkeypatch):
    cfg = experiments.parse_config_dict(tiny_config_dict())
    outputs = []
    for name in ("one", "two"):
        monkeypatch.setenv("HIJACKLAB_OUTPUT_DIR", str(tmp_path / name))
        records = experiments.run_scenario(cfg)
        out = tmp_path / name / "clean"
        assert (out / "metrics.csv").exists()
        assert (out / "config.json").exists()
        assert (out / "manifest.json").exists()
        assert (out / "metrics.svg").exists()
        assert (out / "clean_seed0.ckpt").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["records"] == len(records)
        assert "completed_at" in manifest
        outputs.append(((out / "metrics.csv").read_bytes(),
                        (out / "config.json").read_bytes()))
    assert outputs[0] == outputs[1]


def test_clean_scenario_records_cover_rounds(tmp_path, monkeypatch):
    monkeypatch.setenv("HIJACKLAB_OUTPUT_DIR", str(tmp_path))
    cfg = experiments.parse_config_dict(tiny_config_dict())
    records = experiments.run_scenario(cfg)
    rounds = [r.round for r in records]
    assert rounds == [str(i) for i in range(4)] + ["final"]
    assert all(r.method == "clean" and r.asr == 0.0 for r in records)
