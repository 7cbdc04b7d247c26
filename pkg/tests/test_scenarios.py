import numpy as np
import pytest
from scipy.special import expit, logit

from analysis.scenarios import (
    generate,
    latent_scores,
    load_csv,
    load_scenario,
    save_csv,
    true_ate,
    true_cf_slope,
    true_delta,
    true_q,
    true_treatment_model,
)
from core.exceptions import ConfigurationException, DataValidationException, FileOperationException
from core.models import (
    FactorizedTreatmentModel,
    LatentClassModel,
    ScenarioSpec,
    TreatmentDistribution,
    enumerate_patterns,
)


def test_fig1_marginal_matches_mixture():
    data = generate(ScenarioSpec.default("Fig1", n=50000, seed=1))
    # P(A1=1) = 0.5·0.2 + 0.5·0.8
    assert data.treatments[:, 0].mean() == pytest.approx(0.5, abs=0.01)
    assert set(np.unique(data.oracle_latent).tolist()) == {0, 1}


def test_fig1_outcome_mean_given_class_and_pattern():
    spec = ScenarioSpec.default("Fig1", n=40000, seed=2)
    data = generate(spec)
    for z in (0, 1):
        for pattern in enumerate_patterns(spec.m):
            rows = (data.oracle_latent == z) & np.all(data.treatments == pattern, axis=1)
            expected = spec.beta0 + pattern @ spec.beta + spec.sigma * z
            assert data.outcome[rows].mean() == pytest.approx(expected, abs=0.4)


def test_fig3_edges_run_from_first_treatment_only():
    spec = ScenarioSpec.default("Fig3", n=40000, seed=3)
    data = generate(spec)
    a = data.treatments
    for z in (0, 1):
        in_class = data.oracle_latent == z
        on, off = in_class & (a[:, 0] == 1), in_class & (a[:, 0] == 0)
        for j in (1, 2):
            base = spec.cond[z, j]
            shift = expit(logit(base) + spec.edge_strength) - base
            assert a[on, j].mean() - a[off, j].mean() == pytest.approx(shift, abs=0.04)
        # A4 ⊥ A1 | Z
        assert a[on, 3].mean() - a[off, 3].mean() == pytest.approx(0.0, abs=0.04)


def test_generation_is_deterministic_and_row_consistent(fig1_spec):
    full = generate(fig1_spec)
    assert full.equals(generate(fig1_spec))
    rows = np.array([1999, 3, 500, 3])
    assert generate(fig1_spec, rows).equals(full.take(rows))
    assert not full.equals(generate(fig1_spec.with_seed(8)))


def test_degenerate_prior_puts_every_row_in_first_class():
    spec = ScenarioSpec.default("Fig1", n=200, prior=[1.0, 0.0])
    assert np.all(generate(spec).oracle_latent == 0)


def test_iv_scenario_carries_instrument():
    spec = ScenarioSpec.default("IVBinary", n=400)
    data = generate(spec)
    assert data.instrument is not None
    assert data.levels == spec.levels
    assert data.instrument.min() >= 0 and data.instrument.max() < spec.levels


def test_true_ate_is_linear_contrast():
    spec = ScenarioSpec.default("Fig1")
    assert true_ate(spec, [1, 1, 1], [0, 0, 0]) == 6.0
    assert true_ate(spec, [1, 0, 1], [0, 1, 0]) == 2.0
    assert true_ate(spec, [1, 0, 1], [1, 0, 1]) == 0.0
    with pytest.raises(ConfigurationException):
        true_ate(spec, [1, 0], [0, 0, 0])


def test_true_delta_for_product_policies():
    spec = ScenarioSpec.default("Fig1", cond=[[0.2, 0.2], [0.8, 0.8]], beta=[1.0, 1.0])
    p1 = TreatmentDistribution.product([0.9, 0.9])
    p0 = TreatmentDistribution.product([0.1, 0.1])
    assert true_delta(spec, p1, p0) == pytest.approx(1.6, abs=1e-12)
    assert true_delta(spec, p1, p1) == 0.0


def test_true_delta_of_point_masses_equals_true_ate():
    spec = ScenarioSpec.default("Fig1")
    a, a_prime = (1, 1, 0), (0, 1, 1)
    delta = true_delta(spec, TreatmentDistribution.point_mass(a), TreatmentDistribution.point_mass(a_prime))
    assert delta == true_ate(spec, a, a_prime)


def test_true_q_is_lexicographic():
    spec = ScenarioSpec.default("IVBinary")
    q = true_q(spec)
    assert q.shape == (4,)
    # 依次为 00, 01, 10, 11
    assert q[3] - q[0] == pytest.approx(3.0)
    assert q[2] - q[1] == pytest.approx(-1.0)


def test_oracle_treatment_models():
    assert isinstance(true_treatment_model(ScenarioSpec.default("Fig1")), LatentClassModel)
    fig3 = true_treatment_model(ScenarioSpec.default("Fig3"))
    assert isinstance(fig3, FactorizedTreatmentModel)
    assert fig3.parents[1] == (0,)
    assert true_cf_slope(ScenarioSpec.default("CFTriangular")) == 1.5
    with pytest.raises(ConfigurationException):
        true_cf_slope(ScenarioSpec.default("Fig1"))


@pytest.mark.parametrize("scenario_id", ["Fig1", "CFTriangular", "IVBinary"])
def test_csv_round_trip_is_bit_exact(tmp_path, scenario_id):
    data = generate(ScenarioSpec.default(scenario_id, n=60, seed=3))
    path = save_csv(data, tmp_path / f"{scenario_id}.csv")
    back = load_csv(path)
    assert back.equals(data)


def test_minimal_csv_is_read(tmp_path):
    path = tmp_path / "mini.csv"
    path.write_text("A1,A2,Y\n0,1,2.5\n", encoding="utf-8")
    data = load_csv(path)
    assert data.n == 1 and data.m == 2
    assert data.treatments.tolist() == [[0, 1]]
    assert data.outcome.tolist() == [2.5]


def test_non_binary_cell_reports_file_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("A1,A2,Y\n0,1,2.5\n1,2,0.0\n", encoding="utf-8")
    with pytest.raises(DataValidationException) as info:
        load_csv(path, binary=True)
    assert info.value.line == 3
    assert info.value.column == "A2"


@pytest.mark.parametrize("content", [
    "",
    "B1,Y\n0,1.0\n",
    "A1,A2,Y\n",
    "A1,Y\n0,abc\n",
])
def test_malformed_csv_is_rejected(tmp_path, content):
    path = tmp_path / "broken.csv"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(DataValidationException):
        load_csv(path)


def test_missing_csv_is_a_file_error(tmp_path):
    with pytest.raises(FileOperationException):
        load_csv(tmp_path / "nope.csv")


def test_load_scenario_from_toml(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(
        '[scenario]\nscenario_id = "Fig1"\nn = 25\nseed = 9\n'
        'prior = [0.3, 0.7]\ncond = [[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]]\nbeta = [1.0, 0.0, -1.0]\n',
        encoding="utf-8",
    )
    spec = load_scenario(path)
    assert spec.n == 25 and spec.seed == 9
    assert spec.prior.tolist() == [0.3, 0.7]


@pytest.mark.parametrize("scenario_id", ["Fig2a", "Fig2b"])
def test_shared_component_scenarios_use_composite_classes(scenario_id):
    spec = ScenarioSpec.default(scenario_id, n=500, seed=2)
    data = generate(spec)
    assert data.oracle_latent.min() >= 0 and data.oracle_latent.max() <= 7
    model = true_treatment_model(spec)
    assert model.k == 8
    assert model.prior.sum() == pytest.approx(1.0)
    assert latent_scores(spec).tolist() == [0, 1, 1, 2, 1, 2, 2, 3]
