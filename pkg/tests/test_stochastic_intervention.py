import numpy as np
import pytest

from analysis.parametric_id import fit_factorized_model
from analysis.scenarios import generate, true_delta, true_treatment_model
from analysis.stochastic_intervention import (
    delta_from_factorized,
    estimate_delta,
    parse_distribution,
    support_check,
)
from core.exceptions import (
    ConfigurationException,
    DataValidationException,
    IdentificationException,
    WeightExplosionException,
)
from core.models import Dataset, FitConfig, LatentClassModel, ScenarioSpec, SIConfig, TreatmentDistribution

HIGH = TreatmentDistribution.product([0.7, 0.7, 0.7])
LOW = TreatmentDistribution.product([0.3, 0.3, 0.3])
MID = TreatmentDistribution.product([0.5, 0.4, 0.6])


@pytest.fixture
def fig1_data(fig1_spec):
    return generate(fig1_spec)


@pytest.fixture
def fig1_model():
    return true_treatment_model(ScenarioSpec.default("Fig1"))


def _delta(data, model, p1, p0, **options):
    return estimate_delta(data, model, SIConfig(p1=p1, p0=p0, **options), replicates=0).estimate


def test_same_policy_gives_exact_zero(fig1_data, fig1_model):
    assert _delta(fig1_data, fig1_model, HIGH, HIGH) == 0.0


def test_swapping_policies_negates(fig1_data, fig1_model):
    forward = _delta(fig1_data, fig1_model, HIGH, LOW)
    assert _delta(fig1_data, fig1_model, LOW, HIGH) == -forward


def test_effects_chain_additively(fig1_data, fig1_model):
    whole = _delta(fig1_data, fig1_model, HIGH, LOW)
    parts = _delta(fig1_data, fig1_model, HIGH, MID) + _delta(fig1_data, fig1_model, MID, LOW)
    assert whole == pytest.approx(parts, abs=1e-10)


def test_constant_outcome_has_no_effect(fig1_data, fig1_model):
    flat = fig1_data.with_outcome(np.ones(fig1_data.n))
    assert _delta(flat, fig1_model, HIGH, LOW) == 0.0


def test_report_diagnostics(fig1_data, fig1_model):
    config = SIConfig(p1=HIGH, p0=LOW, weight_mode="oracle")
    report = estimate_delta(fig1_data, fig1_model, config, replicates=10, seed=4)
    assert report.estimand == "delta"
    assert report.method == "si"
    assert report.std_error > 0
    assert report.diagnostics["weight_mode"] == "oracle"
    assert report.diagnostics["normalization"] == "self_normalized"
    assert report.diagnostics["truncated"] == 0
    assert report.contrast["p1"].startswith("prod:")


def test_truncation_is_counted(fig1_data, fig1_model):
    config = SIConfig(p1=HIGH, p0=LOW, truncation=1.0)
    report = estimate_delta(fig1_data, fig1_model, config, replicates=0)
    assert report.diagnostics["truncated"] > 0
    assert report.diagnostics["max_weight"] <= 1.0
    assert any("1.0" in note for note in report.notes)


@pytest.fixture
def capped_model():
    """A3 在两个类别下都恒为 0"""
    return LatentClassModel(prior=[0.5, 0.5], cond=[[0.2, 0.3, 0.0], [0.8, 0.7, 0.0]])


def test_support_violation_is_reported(capped_model):
    config = SIConfig(p1=TreatmentDistribution.point_mass((1, 1, 1)), p0=TreatmentDistribution.point_mass((0, 0, 0)))
    report = support_check(config, capped_model)
    assert not report.passed
    assert report.offending == {'p1': ["111"], 'p0': []}
    assert any("111" in note for note in report.notes)


def test_support_violation_blocks_estimation(fig1_data, capped_model):
    config = SIConfig(p1=TreatmentDistribution.point_mass((1, 1, 1)), p0=TreatmentDistribution.point_mass((0, 0, 0)))
    with pytest.raises(IdentificationException):
        estimate_delta(fig1_data, capped_model, config, replicates=0)


def test_zero_denominator_explodes(capped_model):
    data = Dataset(treatments=[[0, 0, 0], [1, 0, 1], [1, 1, 0]], outcome=[0.0, 1.0, 2.0])
    config = SIConfig(p1=TreatmentDistribution.product([0.8, 0.8, 0.0]), p0=TreatmentDistribution.product([0.2, 0.2, 0.0]))
    with pytest.raises(WeightExplosionException) as info:
        estimate_delta(data, capped_model, config, replicates=0)
    assert info.value.row == 1
    assert isinstance(info.value, IdentificationException)


def test_unobserved_point_mass_has_no_weight(fig1_model):
    data = Dataset(treatments=[[0, 0, 0], [0, 0, 1], [0, 1, 0]], outcome=[0.0, 1.0, 2.0])
    config = SIConfig(p1=TreatmentDistribution.point_mass((1, 1, 1)), p0=TreatmentDistribution.point_mass((0, 0, 0)))
    with pytest.raises(IdentificationException) as info:
        estimate_delta(data, fig1_model, config, replicates=0)
    assert not isinstance(info.value, WeightExplosionException)


def test_oracle_mode_requires_latent_column(fig1_model):
    data = Dataset(treatments=[[0, 0, 0], [1, 1, 1]], outcome=[0.0, 1.0])
    with pytest.raises(ConfigurationException):
        estimate_delta(data, fig1_model, SIConfig(p1=HIGH, p0=LOW, weight_mode="oracle"), replicates=0)


def test_factorized_entry_point_rejects_latent_class_model(fig1_data, fig1_model):
    with pytest.raises(ConfigurationException):
        delta_from_factorized(fig1_data, fig1_model, SIConfig(p1=HIGH, p0=LOW), replicates=0)


def test_factorized_model_is_accepted():
    spec = ScenarioSpec.default("Fig3", n=1000, seed=2)
    p1 = TreatmentDistribution.product([0.6, 0.6, 0.6, 0.6])
    p0 = TreatmentDistribution.product([0.4, 0.4, 0.4, 0.4])
    report = delta_from_factorized(generate(spec), true_treatment_model(spec), SIConfig(p1=p1, p0=p0), replicates=0)
    assert report.method == "si_factorized"
    assert np.isfinite(report.estimate)


@pytest.mark.slow
def test_oracle_weights_recover_policy_effect():
    spec = ScenarioSpec.default("Fig1", n=100000, seed=13)
    config = SIConfig(p1=HIGH, p0=LOW, weight_mode="oracle")
    report = estimate_delta(generate(spec), true_treatment_model(spec), config, replicates=100, seed=6)
    assert report.std_error > 0
    assert abs(report.estimate - true_delta(spec, HIGH, LOW)) <= 3 * report.std_error


@pytest.mark.slow
def test_factorized_model_recovers_policy_effect_with_treatment_edges():
    spec = ScenarioSpec.default("Fig3", n=100000, seed=19)
    data = generate(spec)
    p1 = TreatmentDistribution.product([0.7, 0.7, 0.7, 0.7])
    p0 = TreatmentDistribution.product([0.3, 0.3, 0.3, 0.3])
    fmodel = fit_factorized_model(data, config=FitConfig(restarts=5, seed=0))
    config = SIConfig(p1=p1, p0=p0, weight_mode="oracle")
    report = delta_from_factorized(data, fmodel, config, replicates=100, seed=7)
    assert report.std_error > 0
    assert abs(report.estimate - true_delta(spec, p1, p0)) <= 3 * report.std_error


def test_parse_distribution_literals(tmp_path):
    prod = parse_distribution("prod:0.9,0.1", 2)
    assert prod.full_table() == pytest.approx([0.09, 0.01, 0.81, 0.09])
    point = parse_distribution("point:10", 2)
    assert point.full_table().tolist() == [0.0, 0.0, 1.0, 0.0]

    (tmp_path / "policy.csv").write_text("A1,A2,p\n0,0,0.25\n1,1,0.75\n", encoding="utf-8")
    table = parse_distribution("table:policy.csv", 2, base_dir=tmp_path)
    assert table.full_table().tolist() == [0.25, 0.0, 0.0, 0.75]


@pytest.mark.parametrize("literal", ["prod:0.5", "uniform:0.5,0.5", "0.5,0.5", "point:1"])
def test_parse_distribution_rejects_bad_literals(literal):
    with pytest.raises(ConfigurationException):
        parse_distribution(literal, 2)


def test_table_file_with_duplicate_rows(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("A1,p\n0,0.5\n0,0.5\n", encoding="utf-8")
    with pytest.raises(DataValidationException) as info:
        parse_distribution(f"table:{path}", 1)
    assert info.value.line == 3
