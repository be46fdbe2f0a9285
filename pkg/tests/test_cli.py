"""Command-line interface: exit codes, artifacts, help text."""

import json

import numpy as np
import pytest

from hijacklab import cli, data, models
from tests.test_experiments import tiny_config_dict


def _write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def test_validate_config_ok(tmp_path, capsys):
    path = _write_config(tmp_path, tiny_config_dict())
    assert cli.main(["validate-config", path]) == cli.EXIT_OK
    assert "scenario=clean" in capsys.readouterr().out


def test_missing_config_file_is_config_error(tmp_path, capsys):
    code = cli.main(["validate-config", str(tmp_path / "absent.json")])
    assert code == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_invalid_json_is_config_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    assert cli.main(["validate-config", str(path)]) == cli.EXIT_CONFIG


def test_unknown_key_is_config_error(tmp_path, capsys):
    path = _write_config(tmp_path, tiny_config_dict(surprise=1))
    assert cli.main(["run", path]) == cli.EXIT_CONFIG
    assert "surprise" in capsys.readouterr().err


def test_run_clean_scenario(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HIJACKLAB_OUTPUT_DIR", str(tmp_path / "out"))
    path = _write_config(tmp_path, tiny_config_dict())
    assert cli.main(["run", path]) == cli.EXIT_OK
    assert (tmp_path / "out" / "clean" / "metrics.csv").exists()
    assert "metrics.csv" in capsys.readouterr().out


def test_run_runtime_failure_is_exit_three(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HIJACKLAB_OUTPUT_DIR", str(tmp_path / "out"))
    raw = tiny_config_dict(scenario="hijackfl")
    raw["attack"]["anchor_iters"] = 0  # anchor search cannot succeed
    raw["attack"]["anchor_restarts"] = 1
    path = _write_config(tmp_path, raw)
    assert cli.main(["run", path]) == cli.EXIT_RUNTIME
    assert "runtime error" in capsys.readouterr().err


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "default configuration" in out
    assert "rounds=60" in out
    assert "alpha=0.65" in out


def test_export_features_command(tmp_path, capsys):
    params = models.init_model(models.ModelSpec(16, (8, 6), 3), seed=0)
    ckpt = tmp_path / "model.ckpt"
    models.save_checkpoint(params, ckpt)
    paths = []
    for name, seed in (("alpha", 1), ("beta", 2)):
        dataset = data.synthesize_task(3, 5, shape=(1, 4, 4), seed=seed,
                                       name=name)
        p = tmp_path / f"{name}.bin"
        data.save_dataset(dataset, p)
        paths.append(str(p))
    out = tmp_path / "features.csv"
    code = cli.main(["export-features", str(ckpt), *paths,
                     "--output", str(out), "--per-group", "6"])
    assert code == cli.EXIT_OK
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "group,x,y"
    assert len(lines) == 13
    assert {l.split(",")[0] for l in lines[1:]} == {"alpha", "beta"}


def test_export_features_missing_checkpoint(tmp_path, capsys):
    code = cli.main(["export-features", str(tmp_path / "no.ckpt"),
                     str(tmp_path / "no.bin")])
    assert code == cli.EXIT_CONFIG
