import numpy as np
import pytest

from analysis import parametric_id as pid
from analysis.factor_model import canonicalize, fit_em
from analysis.scenarios import generate, true_treatment_model
from core.exceptions import ConfigurationException, IdentificationException
from core.models import BasisSpec, FitConfig, LatentClassModel, ScenarioSpec

FLAT = LatentClassModel(prior=[0.5, 0.5], cond=[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]])


@pytest.fixture
def fig1_model():
    return true_treatment_model(ScenarioSpec.default("Fig1"))


def test_rank_is_full_for_informative_model(fig1_model):
    report = pid.test_linear_independence(fig1_model)
    assert report.columns == ["const", "A1", "A2", "A3", "sigma"]
    assert report.rank == 5
    assert report.full_rank


def test_flat_model_loses_the_latent_column():
    report = pid.test_linear_independence(FLAT)
    assert report.rank == 4
    assert not report.full_rank
    assert report.notes


def test_known_sigma_restores_full_rank():
    report = pid.test_linear_independence(FLAT, BasisSpec(sigma_known=1.0))
    assert report.sigma_known
    assert report.full_rank
    assert report.rank == 4


def test_population_regression_recovers_coefficients(fig1_model):
    design, _, names = pid.population_design(fig1_model)
    truth = np.array([0.5, 1.0, 2.0, 3.0, 1.5])
    coef = pid.population_regression(fig1_model, design @ truth)
    assert [coef[name] for name in names] == pytest.approx(truth.tolist(), abs=1e-8)


def test_rescaling_g_rescales_sigma_only(fig1_model):
    """g 取 2z 时 σ̂ 减半，β̂ 不变"""
    design, _, _ = pid.population_design(fig1_model)
    response = design @ np.array([0.0, 1.0, 2.0, 3.0, 1.0])
    base = pid.population_regression(fig1_model, response)
    doubled = pid.population_regression(fig1_model, response, BasisSpec(g=lambda z: 2.0 * z))
    assert doubled["sigma"] == pytest.approx(base["sigma"] / 2.0, abs=1e-8)
    for name in ("A1", "A2", "A3"):
        assert doubled[name] == pytest.approx(base[name], abs=1e-8)


def test_population_regression_refuses_rank_deficient_model():
    with pytest.raises(IdentificationException):
        pid.population_regression(FLAT, np.zeros(8))


def test_additive_estimate_reports_sigma_or_contrast(fig1_spec, fig1_model):
    data = generate(fig1_spec)
    sigma = pid.estimate_additive(data, fig1_model, replicates=0)
    assert sigma.estimand == "sigma"
    assert sigma.estimate == sigma.coefficients["sigma"]
    ate = pid.estimate_additive(data, fig1_model, a=(1, 1, 1), a_prime=(0, 0, 0), replicates=10, seed=2)
    assert ate.estimand == "ate"
    coef = ate.coefficients
    assert ate.estimate == pytest.approx(coef["A1"] + coef["A2"] + coef["A3"], abs=1e-10)
    assert ate.std_error > 0


def test_additive_estimate_with_known_sigma(fig1_spec, fig1_model):
    data = generate(fig1_spec)
    report = pid.estimate_additive(data, fig1_model, BasisSpec(sigma_known=1.0), replicates=0)
    assert "sigma" not in report.coefficients
    assert np.isnan(report.estimate)


def test_additive_estimate_raises_when_not_identified(fig1_spec):
    with pytest.raises(IdentificationException):
        pid.estimate_additive(generate(fig1_spec), FLAT, replicates=0)


def test_naive_regression_contrast(fig1_spec):
    data = generate(fig1_spec)
    report = pid.naive_regression(data, (1, 0, 0), (0, 0, 0), replicates=0)
    assert report.method == "naive"
    assert report.estimate == pytest.approx(report.coefficients["A1"], abs=1e-12)


def test_factorized_model_requires_four_treatments(fig1_spec):
    with pytest.raises(ConfigurationException):
        pid.fit_factorized_model(generate(fig1_spec))


def test_conditional_effects_without_latent_match_naive():
    data = generate(ScenarioSpec.default("Fig3", n=800, seed=3))
    fmodel = true_treatment_model(ScenarioSpec.default("Fig3"))
    report = pid.estimate_conditional_effects(data, fmodel, include_latent=False, replicates=0)
    naive = pid.naive_regression(data, replicates=0)
    assert list(report.coefficients) == ["const", "A1", "A2", "A3", "A4"]
    for name, value in naive.coefficients.items():
        assert report.coefficients[name] == pytest.approx(value, abs=1e-12)
    coef = report.coefficients
    assert report.estimate == pytest.approx(coef["A2"] + coef["A3"] + coef["A4"], abs=1e-12)
    assert report.diagnostics["coefficient_labels"]["A1"] == "non_causal_total"


@pytest.mark.slow
def test_conditional_effects_recover_truth_at_scale():
    spec = ScenarioSpec.default("Fig3", n=50000, seed=12)
    data = generate(spec)
    fmodel = pid.fit_factorized_model(data, config=FitConfig(restarts=5, seed=0))
    report = pid.estimate_conditional_effects(data, fmodel, replicates=100, seed=4)
    # β2 + β3 + β4 = 2 + 3 − 1
    assert report.std_error > 0
    assert abs(report.estimate - 4.0) <= 3 * report.std_error
    assert "sigma" in report.coefficients


@pytest.mark.slow
def test_additive_model_recovers_coefficients_where_naive_is_biased():
    spec = ScenarioSpec.default("Fig1", n=50000, seed=17, sigma=2.0)
    data = generate(spec)
    model = fit_em(data, 2, FitConfig(restarts=10, seed=0))
    adjusted = pid.estimate_additive(data, model, replicates=100, seed=5)
    naive = pid.naive_regression(data, replicates=100, seed=5)
    naive_biased = False
    for j, beta in enumerate(spec.beta, 1):
        name = f"A{j}"
        assert abs(adjusted.coefficients[name] - beta) <= 3 * adjusted.coefficient_se[name]
        naive_biased |= abs(naive.coefficients[name] - beta) > 3 * naive.coefficient_se[name]
    assert adjusted.estimate == pytest.approx(2.0, abs=3 * adjusted.std_error)
    assert naive_biased


def test_rank_test_fails_when_class_rows_are_equal():
    spec = ScenarioSpec.default("Fig1", cond=[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]])
    assert not pid.test_linear_independence(true_treatment_model(spec)).full_rank
    with pytest.raises(IdentificationException):
        pid.estimate_additive(generate(spec), true_treatment_model(spec), replicates=0)


def _canonical_tables(model):
    model = canonicalize(model)
    return model.prior, model.tables


@pytest.mark.slow
@pytest.mark.parametrize("edge_strength", [1.0, 0.0])
def test_factorized_fit_recovers_generating_tables(edge_strength):
    spec = ScenarioSpec.default("Fig3", n=100000, seed=31, edge_strength=edge_strength)
    fitted = pid.fit_factorized_model(generate(spec), config=FitConfig(restarts=10, seed=0))
    prior, tables = _canonical_tables(fitted)
    true_prior, true_tables = _canonical_tables(true_treatment_model(spec))
    assert fitted.parents == ((), (0,), (0,), ())
    assert prior == pytest.approx(true_prior, abs=0.03)
    for got, want in zip(tables, true_tables):
        assert got.shape == want.shape
        assert got == pytest.approx(want, abs=0.03)
    if edge_strength == 0.0:
        # 无直接边时，A2/A3 的条件概率表两行一致
        for j in (1, 2):
            assert tables[j][0] == pytest.approx(tables[j][1], abs=0.03)
