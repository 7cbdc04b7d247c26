"""蒙特卡洛实验：可复现性、汇总公式、报告输出"""

import asyncio
import json
from pathlib import Path

import pytest

from analysis.harness import (
    emit_report,
    estimator_labels,
    load_experiment,
    load_summary,
    long_frame,
    replicate_frame,
    replicate_seed,
    run_experiment,
    run_replicate,
    summary_json,
)
from analysis.scenarios import load_scenario
from core.exceptions import ConfigurationException
from core.models import EstimatorSpec, ExperimentConfig, ScenarioSpec


def _config(replicates=3, workers=1, extra=()):
    estimators = [
        EstimatorSpec("deconfounder", {'k': 2, 'restarts': 2}),
        EstimatorSpec("naive"),
        EstimatorSpec("si", {'weights': "oracle"}),
        EstimatorSpec("diagnose", {'restarts': 2, 'bootstrap_count': 3}),
        *extra,
    ]
    return ExperimentConfig(
        scenario=ScenarioSpec.default("Fig1", n=300),
        estimators=estimators,
        replicates=replicates,
        base_seed=17,
        workers=workers,
        bootstrap=5,
    )


@pytest.fixture(scope="module")
def summary():
    return asyncio.run(run_experiment(_config()))


def test_replicate_seeds_are_distinct():
    seeds = {replicate_seed(17, r) for r in range(100)}
    assert len(seeds) == 100
    assert replicate_seed(17, 3) == replicate_seed(17, 3)


def test_duplicate_estimator_names_get_suffixes():
    labels = estimator_labels([
        EstimatorSpec("naive"), EstimatorSpec("naive"), EstimatorSpec("naive", {'label': "plain"}),
    ])
    assert labels == ["naive", "naive#2", "plain"]


def test_single_replicate_matches_direct_call():
    config = _config(replicates=1)
    result = asyncio.run(run_experiment(config))
    assert result.rows == run_replicate(config.to_dict(), 0)


def test_summary_is_deterministic(summary):
    again = asyncio.run(run_experiment(_config()))
    assert summary_json(again) == summary_json(summary)


def test_parallel_workers_do_not_change_results():
    sequential = asyncio.run(run_experiment(_config(replicates=2)))
    parallel = asyncio.run(run_experiment(_config(replicates=2, workers=2)))
    assert summary_json(parallel) == summary_json(sequential)


def test_rmse_decomposes_into_bias_and_spread(summary):
    for name in ("deconfounder", "naive", "si"):
        stats = summary.estimators[name]
        assert stats.successes == 3
        assert stats.rmse ** 2 == pytest.approx(stats.bias ** 2 + stats.sd ** 2, abs=1e-9)
    diagnose = summary.estimators["diagnose"]
    assert diagnose.rejection_rate is not None
    assert diagnose.bias is None


def test_oracle_values_come_from_scenario(summary):
    assert summary.estimators["deconfounder"].oracle == 6.0
    assert summary.estimators["naive"].oracle == 6.0


def test_failing_estimator_is_contained():
    result = asyncio.run(run_experiment(_config(replicates=2, extra=[EstimatorSpec("iv")])))
    iv = result.estimators["iv"]
    assert iv.successes == 0 and iv.failures == 2
    assert result.estimators["naive"].successes == 2
    errors = [row["error"] for row in result.rows if row["estimator"] == "iv"]
    assert all(error.startswith("ConfigurationException") for error in errors)
    assert result.failures == 2


def test_report_tables_have_expected_shape(summary):
    assert len(replicate_frame(summary)) == 3 * 4
    long = long_frame(summary)
    assert len(long) == 3 * 4 * 4
    assert list(long.columns) == ["replicate", "estimator", "metric", "value"]


def test_csv_report_writes_wide_and_long_tables(tmp_path, summary):
    written = asyncio.run(emit_report(summary, tmp_path / "mc.csv", fmt="csv"))
    assert [p.name for p in written] == ["mc.csv", "mc.long.csv"]
    wide = written[0].read_text(encoding="utf-8").splitlines()
    long = written[1].read_text(encoding="utf-8").splitlines()
    assert len(wide) == 1 + 12
    assert len(long) == 1 + 48


def test_json_report_round_trip(tmp_path, summary):
    (path,) = asyncio.run(emit_report(summary, tmp_path / "mc.json"))
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data["config_digest"] == _config().digest()
    assert summary_json(load_summary(path)) == summary_json(summary)


def test_unknown_report_format(tmp_path, summary):
    with pytest.raises(ConfigurationException):
        asyncio.run(emit_report(summary, tmp_path / "mc.xml", fmt="xml"))


def test_load_experiment_from_toml(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        'replicates = 4\nbase_seed = 3\nbootstrap = 10\n\n'
        '[scenario]\nscenario_id = "Fig1"\nn = 200\n\n'
        '[[estimators]]\nname = "deconfounder"\n[estimators.settings]\nk = 2\na = "110"\n\n'
        '[[estimators]]\nname = "naive"\n',
        encoding="utf-8",
    )
    config = load_experiment(path)
    assert config.replicates == 4
    assert [e.name for e in config.estimators] == ["deconfounder", "naive"]
    assert config.estimators[0].settings["a"] == "110"


def test_load_experiment_rejects_unknown_estimator(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('[scenario]\nscenario_id = "Fig1"\n\n[[estimators]]\nname = "magic"\n', encoding="utf-8")
    with pytest.raises(ConfigurationException):
        load_experiment(path)


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("mc_*.toml")))
def test_bundled_experiments_load(name):
    config = load_experiment(CONFIG_DIR / name)
    assert config.replicates >= 1
    assert config.output.startswith("results/")


def test_bundled_scenario_loads():
    spec = load_scenario(CONFIG_DIR / "fig1.toml")
    assert spec.digest() == ScenarioSpec.default("Fig1", n=5000).digest()
