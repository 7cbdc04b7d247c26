"""命令行：子命令输出与退出码"""

import json

import pytest

from main import main


@pytest.fixture
def data_csv(tmp_path):
    path = tmp_path / "fig1.csv"
    assert main(["simulate", "--scenario", "Fig1", "--n", "400", "--seed", "3", "--out", str(path)]) == 0
    return path


def test_simulate_writes_csv(tmp_path, capsys):
    path = tmp_path / "sim.csv"
    assert main(["simulate", "--scenario", "Fig1", "--n", "50", "--seed", "3", "--out", str(path)]) == 0
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "A1,A2,A3,Y,Z"
    assert len(lines) == 51
    assert str(path) in capsys.readouterr().out


def test_fit_then_estimate_with_saved_model(tmp_path, data_csv):
    model_path = tmp_path / "model.json"
    assert main(["fit", "--data", str(data_csv), "--k", "2", "--restarts", "2", "--out", str(model_path)]) == 0
    model = json.loads(model_path.read_text(encoding="utf-8"))
    assert model["k"] == 2 and len(model["cond"]) == 2

    out = tmp_path / "ate.json"
    code = main([
        "estimate", "--data", str(data_csv), "--method", "deconfounder", "--model", str(model_path),
        "--contrast", "111:000", "--bootstrap", "0", "--out", str(out),
    ])
    assert code == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["method"] == "deconfounder"
    assert report["contrast"] == {'a': "111", 'a_prime': "000"}


def test_estimate_writes_flat_csv(tmp_path, data_csv):
    out = tmp_path / "naive.csv"
    code = main(["estimate", "--data", str(data_csv), "--method", "naive", "--bootstrap", "0",
                 "--format", "csv", "--out", str(out)])
    assert code == 0
    header = out.read_text(encoding="utf-8").splitlines()[0]
    assert "estimate" in header and "coefficients.A1" in header


def test_identification_failure_exits_with_two(tmp_path, data_csv, capsys):
    flat = tmp_path / "flat.json"
    flat.write_text(json.dumps({'k': 2, 'prior': [0.5, 0.5], 'cond': [[0.5] * 3, [0.5] * 3]}), encoding="utf-8")
    code = main(["estimate", "--data", str(data_csv), "--method", "deconfounder",
                 "--model", str(flat), "--bootstrap", "0"])
    assert code == 2
    assert "IdentificationException" in capsys.readouterr().err


def test_stochastic_intervention_requires_both_policies(data_csv):
    assert main(["estimate", "--data", str(data_csv), "--method", "si", "--p1", "prod:0.8,0.8,0.8"]) == 1


def test_stochastic_intervention_with_policies(tmp_path, data_csv):
    out = tmp_path / "si.json"
    code = main([
        "estimate", "--data", str(data_csv), "--method", "si", "--weights", "oracle", "--restarts", "2",
        "--p1", "prod:0.8,0.8,0.8", "--p0", "point:000", "--bootstrap", "0", "--out", str(out),
    ])
    assert code == 0
    assert json.loads(out.read_text(encoding="utf-8"))["estimand"] == "delta"


def test_missing_data_file_exits_with_one(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "missing.csv")]) == 1


def test_malformed_contrast_exits_with_one(data_csv):
    assert main(["estimate", "--data", str(data_csv), "--method", "naive", "--contrast", "11:000",
                 "--bootstrap", "0"]) == 1


def test_diagnose_reports_overlap_and_identifiability(tmp_path, data_csv):
    out = tmp_path / "diag.json"
    code = main(["diagnose", "--data", str(data_csv), "--restarts", "2", "--bootstrap-count", "0",
                 "--out", str(out)])
    assert code == 0
    record = json.loads(out.read_text(encoding="utf-8"))
    assert set(record) == {"diagnostic", "overlap", "identifiability"}
    assert record["diagnostic"]["gof_p_value"] == 1.0


def test_mc_writes_report(tmp_path):
    config = tmp_path / "mc.toml"
    config.write_text(
        'replicates = 2\nbase_seed = 1\nbootstrap = 0\n\n'
        '[scenario]\nscenario_id = "Fig1"\nn = 200\n\n'
        '[[estimators]]\nname = "naive"\n',
        encoding="utf-8",
    )
    out = tmp_path / "mc.json"
    assert main(["mc", "--config", str(config), "--out", str(out)]) == 0
    summary = json.loads(out.read_text(encoding="utf-8"))
    assert summary["replicates"] == 2
    assert summary["estimators"]["naive"]["successes"] == 2


def test_mc_without_config_exits_with_one():
    assert main(["mc"]) == 1


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["estimate", "--method", "naive"]])
def test_usage_errors_exit_with_one(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


@pytest.mark.parametrize("command", ["fit", "estimate", "diagnose"])
def test_config_is_rejected_where_it_is_not_read(tmp_path, data_csv, capsys, command):
    config = tmp_path / "fig1.toml"
    config.write_text('[scenario]\nscenario_id = "Fig1"\n', encoding="utf-8")
    argv = [command, "--data", str(data_csv), "--config", str(config)]
    if command == "estimate":
        argv += ["--method", "naive", "--bootstrap", "0"]
    assert main(argv) == 1
    assert "--config" in capsys.readouterr().err
