import json
import math
from pathlib import Path

import pytest

from fadechan import cli
from fadechan.output import write_json
from fadechan.turbulence import FieldStatistics

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_SCENARIO = ROOT / "data" / "default_scenario.json"


def _scenario(tmp_path, **data):
    payload = {"model": "beam_wandering", "sampling": {"n_samples": 3000, "bins": 30, "shard_size": 1000}}
    payload.update(data)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def _stats_file(tmp_path, **overrides):
    data = {
        "mean_eta": (0.9, 0.32),
        "eta_corr": [[0.81 * 1.001, 0.288 * 1.005], [0.288 * 1.005, 0.1024 * 1.05]],
        "W_ST": 0.03,
        "sigma_bw2": 1e-4,
        "theta_mean": math.log(2.25),
        "theta_cov": [[0.01, 0.0], [0.0, 0.01]],
    }
    data.update(overrides)
    return str(write_json(tmp_path / "stats.json", FieldStatistics(**data).to_dict()))


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args([])


def test_parser_options():
    args = cli.build_parser().parse_args(["pdt", "s.json", "--set", "channel.L=900", "--seed", "3", "--out", "x"])
    assert args.set == ["channel.L=900"]
    assert cli._overrides(args) == ["channel.L=900", "sampling.seed=3"]
    assert cli.build_parser().parse_args(["validate"]).scenario is None


def test_pdt_with_cached_statistics(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["pdt", _scenario(tmp_path), "--stats", _stats_file(tmp_path), "--seed", "42", "--out", str(out)])

    assert code == 0
    summary = json.loads((out / "pdt.json").read_text(encoding="utf-8"))
    assert summary["seed"] == 42
    assert (out / "pdt.csv").exists()
    assert str(out / "pdt.json") in capsys.readouterr().out


def test_invalid_scenario_exits_with_input_code(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["pdt", _scenario(tmp_path, aperture={"a1": 0.02, "a2": 0.03}), "--out", str(out)])

    assert code == 1
    assert "a2" in capsys.readouterr().err
    assert not (out / "error.json").exists()


def test_missing_scenario_exits_with_input_code(tmp_path):
    assert cli.main(["stats", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1


def test_model_diagnostic_writes_error_file(tmp_path):
    out = tmp_path / "out"
    stats = _stats_file(tmp_path, W_ST=0.01, sigma_bw2=0.01)
    code = cli.main(["pdt", _scenario(tmp_path), "--set", "model=weak_bw", "--stats", stats, "--out", str(out)])

    assert code == 2
    payload = json.loads((out / "error.json").read_text(encoding="utf-8"))
    assert payload["command"] == "pdt"
    assert payload["error"] == "ModelDiagnosticError"
    assert "diagnostics" in payload


def test_validate_default_scenario(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["validate", str(DEFAULT_SCENARIO), "--out", str(out)]) == 0
    report = json.loads((out / "validate.json").read_text(encoding="utf-8"))
    assert report["passed"] is True
    assert report["failed"] == []


def test_validate_reports_schema_failure(tmp_path):
    out = tmp_path / "out"
    bad = _scenario(tmp_path, sampling={"seed": -1})
    assert cli.main(["validate", bad, "--out", str(out)]) == 2
    report = json.loads((out / "validate.json").read_text(encoding="utf-8"))
    assert report["failed"] == ["scenario_schema"]


def test_unexpected_errors_propagate(tmp_path, monkeypatch):
    def explode(_args):
        raise KeyError("boom")

    monkeypatch.setitem(cli.COMMANDS, "stats", explode)
    with pytest.raises(KeyError):
        cli.main(["stats", _scenario(tmp_path), "--out", str(tmp_path)])
