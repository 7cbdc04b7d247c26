import asyncio

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from analysis.factor_model import (
    canonicalize,
    conditional_distribution,
    fit_em,
    identifiability_precheck,
    load_model,
    log_likelihood,
    pattern_probabilities,
    permute_classes,
    posterior,
    refit,
    sample_patterns,
    save_model,
    substitute_confounder,
)
from analysis.scenarios import generate, true_treatment_model
from core.exceptions import ConfigurationException
from core.models import Dataset, FitConfig, LatentClassModel, ScenarioSpec, enumerate_patterns


def test_single_class_fit_is_column_means(fig1_spec):
    data = generate(fig1_spec)
    model = fit_em(data, 1)
    assert model.k == 1
    assert model.cond[0] == pytest.approx(data.treatments.mean(axis=0), abs=1e-12)
    assert model.prior.tolist() == [1.0]


def test_posterior_of_all_ones_pattern():
    model = true_treatment_model(ScenarioSpec.default("Fig1"))
    post = posterior(model, [1, 1, 1])
    assert post[1] == pytest.approx(0.512 / 0.520, abs=1e-12)
    assert post.sum() == pytest.approx(1.0)


def test_uninformative_model_returns_prior():
    model = LatentClassModel(prior=[0.3, 0.7], cond=[[0.4, 0.6], [0.4, 0.6]])
    assert posterior(model, [1, 0]) == pytest.approx([0.3, 0.7], abs=1e-12)


def test_degenerate_prior_gives_degenerate_posterior():
    model = LatentClassModel(prior=[1.0, 0.0], cond=[[0.2, 0.3], [0.8, 0.9]])
    assert posterior(model, [1, 1]).tolist() == [1.0, 0.0]


@st.composite
def latent_class_models(draw):
    k = draw(st.integers(min_value=2, max_value=4))
    m = draw(st.integers(min_value=1, max_value=4))
    weights = draw(st.lists(st.floats(min_value=0.05, max_value=1.0), min_size=k, max_size=k))
    prior = np.array(weights) / sum(weights)
    cond = draw(st.lists(
        st.lists(st.floats(min_value=0.01, max_value=0.99), min_size=m, max_size=m),
        min_size=k, max_size=k,
    ))
    order = draw(st.permutations(list(range(k))))
    return LatentClassModel(prior=prior, cond=cond), order


@settings(max_examples=40, deadline=None)
@given(latent_class_models())
def test_canonical_form_and_likelihood_ignore_label_order(case):
    """置换类别标签后，规范形式与对数似然逐位不变"""
    model, order = case
    permuted = permute_classes(model, order)
    a, b = canonicalize(model), canonicalize(permuted)
    assert np.array_equal(a.prior, b.prior)
    assert np.array_equal(a.cond, b.cond)
    assert np.array_equal(canonicalize(a).cond, a.cond)

    rng = np.random.default_rng(0)
    data = Dataset(treatments=rng.integers(0, 2, size=(30, model.m)), outcome=np.zeros(30))
    assert log_likelihood(model, data) == log_likelihood(permuted, data)


def test_canonicalize_breaks_ties_with_prior():
    model = LatentClassModel(prior=[0.7, 0.3], cond=[[0.5, 0.5], [0.5, 0.5]])
    assert canonicalize(model).prior.tolist() == [0.3, 0.7]


def test_permutation_must_cover_all_classes():
    model = LatentClassModel(prior=[0.5, 0.5], cond=[[0.2], [0.8]])
    with pytest.raises(ConfigurationException):
        permute_classes(model, [0, 0])


def test_em_trace_never_decreases(fig1_spec):
    model = fit_em(generate(fig1_spec), 2, FitConfig(restarts=3, seed=1))
    trace = np.array(model.metadata.trace)
    assert trace.size >= 2
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))
    assert model.metadata.loglik == pytest.approx(trace[-1])


def test_em_recovers_generating_parameters():
    data = generate(ScenarioSpec.default("Fig1", n=50000, seed=11))
    model = fit_em(data, 2, FitConfig(restarts=3, seed=0))
    assert model.prior == pytest.approx([0.5, 0.5], abs=0.02)
    assert model.cond[0] == pytest.approx([0.2, 0.2, 0.2], abs=0.02)
    assert model.cond[1] == pytest.approx([0.8, 0.8, 0.8], abs=0.02)


def test_constant_treatments_flag_no_variation():
    data = Dataset(treatments=np.tile([1, 0, 1], (10, 1)), outcome=np.zeros(10))
    model = fit_em(data, 2, FitConfig(restarts=2))
    assert "no_variation" in model.metadata.flags


def test_too_many_classes_is_rejected():
    data = Dataset(treatments=[[0], [1], [1]], outcome=[0.0, 1.0, 2.0])
    with pytest.raises(ConfigurationException):
        fit_em(data, 3)


def test_substitute_confounder_is_shared_by_equal_rows(fig1_spec):
    data = generate(fig1_spec)
    model = true_treatment_model(fig1_spec)
    sub = substitute_confounder(model, data)
    assert sub.posteriors.shape == (data.n, 2)
    same = np.all(data.treatments == data.treatments[0], axis=1)
    assert np.all(sub.posteriors[same] == sub.posteriors[0])


def test_identifiability_precheck():
    assert not identifiability_precheck(2, 2).passed
    assert identifiability_precheck(2, 3, true_treatment_model(ScenarioSpec.default("Fig1"))).passed
    flat = LatentClassModel(prior=[0.5, 0.5], cond=[[0.3, 0.3, 0.3], [0.3, 0.3, 0.3]])
    report = identifiability_precheck(2, 3, flat)
    assert not report.passed
    assert any("A1" in failure for failure in report.failures)
    assert identifiability_precheck(1, 2).passed


def test_model_file_round_trip(tmp_path, fig1_spec):
    model = fit_em(generate(fig1_spec), 2, FitConfig(restarts=2))
    path = asyncio.run(save_model(model, tmp_path / "model.json"))
    back = load_model(path)
    assert np.array_equal(back.prior, model.prior)
    assert np.array_equal(back.cond, model.cond)
    assert back.metadata.flags == model.metadata.flags


def test_class_conditional_distribution():
    model = true_treatment_model(ScenarioSpec.default("Fig1"))
    dist = conditional_distribution(model, 1)
    assert dist.full_table()[7] == pytest.approx(0.512)
    assert dist.describe() == "class:1"
    with pytest.raises(ConfigurationException):
        conditional_distribution(model, 2)


def test_pattern_probabilities_sum_to_one_and_match_mixture():
    model = true_treatment_model(ScenarioSpec.default("Fig1"))
    patterns = enumerate_patterns(3)
    probs = pattern_probabilities(model, patterns)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    # 0.5·0.8³ + 0.5·0.2³
    assert probs[7] == pytest.approx(0.26, abs=1e-12)


def test_sampled_patterns_follow_the_model():
    model = true_treatment_model(ScenarioSpec.default("Fig1"))
    patterns, z = sample_patterns(model, 20000, np.random.default_rng(5))
    assert patterns.shape == (20000, 3)
    assert set(np.unique(z).tolist()) == {0, 1}
    assert patterns[z == 1].mean() == pytest.approx(0.8, abs=0.02)
    assert patterns[z == 0].mean() == pytest.approx(0.2, abs=0.02)


def test_two_class_fit_has_class_by_treatment_shape(fig1_spec):
    data = generate(fig1_spec)
    model = fit_em(data, 2, FitConfig(restarts=3, seed=0))
    assert model.cond.shape == (2, 3)
    assert model.prior == pytest.approx([0.5, 0.5], abs=0.08)
    assert model.cond[0] == pytest.approx([0.2, 0.2, 0.2], abs=0.08)
    assert model.cond[1] == pytest.approx([0.8, 0.8, 0.8], abs=0.08)

    patterns, _, counts = data.unique_patterns()
    again = refit(model, patterns, counts, FitConfig(restarts=1, seed=1))
    assert again.cond.shape == (2, 3)
    assert again.cond == pytest.approx(model.cond, abs=1e-2)
