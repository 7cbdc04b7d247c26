"""领域实体的校验与序列化"""

import json

import numpy as np
import pytest

from core.exceptions import ConfigurationException, DataValidationException, EnumerationLimitException
from core.models import (
    Dataset,
    EstimateReport,
    EstimatorSpec,
    ExperimentConfig,
    IVSystem,
    ScenarioSpec,
    SIConfig,
    TreatmentDistribution,
    enumerate_patterns,
    parse_pattern,
    pattern_index,
    pattern_label,
)


def test_patterns_are_lexicographic_with_a1_most_significant():
    patterns = enumerate_patterns(2)
    assert patterns.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]
    assert pattern_index(patterns).tolist() == [0, 1, 2, 3]
    assert pattern_index(np.array([[1, 0, 0]]))[0] == 4


def test_enumeration_guard():
    with pytest.raises(EnumerationLimitException) as info:
        enumerate_patterns(21)
    assert info.value.m == 21


def test_parse_and_label_pattern():
    assert parse_pattern("101") == (1, 0, 1)
    assert pattern_label((1, 0, 1)) == "101"
    with pytest.raises(ConfigurationException):
        parse_pattern("102")
    with pytest.raises(ConfigurationException):
        parse_pattern("10", m=3)


def test_dataset_rejects_non_binary_value_with_row():
    with pytest.raises(DataValidationException) as info:
        Dataset(treatments=[[0, 1], [2, 0]], outcome=[1.0, 2.0])
    assert info.value.line == 3
    assert info.value.column == "A1"


def test_dataset_instrument_must_lie_below_declared_levels():
    with pytest.raises(DataValidationException):
        Dataset(treatments=[[0], [1]], outcome=[0.0, 1.0], instrument=[0, 3], instrument_levels=2)


def test_dataset_take_and_equals():
    data = Dataset(treatments=[[0, 1], [1, 1], [1, 0]], outcome=[0.5, 1.5, 2.5])
    sub = data.take(np.array([2, 0]))
    assert sub.treatments.tolist() == [[1, 0], [0, 1]]
    assert sub.outcome.tolist() == [2.5, 0.5]
    assert data.equals(data.take(np.arange(3)))
    assert not data.equals(sub)


@pytest.mark.parametrize("field,value", [
    ("cond", [[0.2, 0.2, 1.0], [0.8, 0.8, 0.8]]),
    ("prior", [0.6, 0.6]),
    ("noise_sd", 0.0),
    ("beta", [1.0, 2.0]),
])
def test_scenario_spec_names_offending_field(field, value):
    with pytest.raises(ConfigurationException) as info:
        ScenarioSpec.default("Fig1", **{field: value})
    assert info.value.field == field


def test_scenario_spec_from_dict_rejects_unknown_field():
    with pytest.raises(ConfigurationException):
        ScenarioSpec.from_dict({'scenario_id': "Fig1", 'colour': "blue"})


def test_scenario_digest_is_stable():
    a = ScenarioSpec.default("Fig1", n=100, seed=5)
    b = ScenarioSpec.from_dict(a.to_dict())
    assert a.digest() == b.digest()
    assert a.digest() != a.with_seed(6).digest()


def test_iv_scenario_fills_default_instrument_effect():
    spec = ScenarioSpec.default("IVBinary")
    assert spec.iv_effect.shape == (spec.levels, spec.m)


def test_treatment_distribution_product_and_table():
    dist = TreatmentDistribution.product([0.9, 0.1])
    assert dist.full_table() == pytest.approx([0.09, 0.01, 0.81, 0.09])
    point = TreatmentDistribution.point_mass((1, 0))
    assert point.full_table().tolist() == [0.0, 0.0, 1.0, 0.0]
    assert point.describe() == "point:10"
    with pytest.raises(ConfigurationException):
        TreatmentDistribution.from_table([0.5, 0.6], 1)
    with pytest.raises(ConfigurationException):
        TreatmentDistribution.product([1.2])


def test_si_config_requires_matching_dimensions():
    with pytest.raises(ConfigurationException):
        SIConfig(p1=TreatmentDistribution.product([0.5]), p0=TreatmentDistribution.product([0.5, 0.5]))
    with pytest.raises(ConfigurationException):
        SIConfig(
            p1=TreatmentDistribution.product([0.5]),
            p0=TreatmentDistribution.product([0.5]),
            truncation=0.0,
        )


def test_iv_system_columns_must_sum_to_one():
    with pytest.raises(ConfigurationException):
        IVSystem(response=[1.0, 2.0], transition=[[0.5, 0.5], [0.4, 0.5]], counts=[4, 4], m=1)


def test_estimate_report_round_trip_maps_nan_to_null():
    report = EstimateReport(
        estimand="ate", method="deconfounder", estimate=1.25, std_error=float("nan"),
        replicates=0, coefficients={'const': 0.5, 'A1': float("inf")},
    )
    data = json.loads(report.to_json())
    assert data['std_error'] is None
    assert data['coefficients']['A1'] is None
    back = EstimateReport.from_dict(data)
    assert back.estimate == 1.25
    assert np.isnan(back.std_error)


def test_estimate_report_rejects_negative_se():
    with pytest.raises(ConfigurationException):
        EstimateReport(estimand="ate", method="naive", estimate=0.0, std_error=-1.0)


def test_experiment_config_invariants():
    spec = ScenarioSpec.default("Fig1", n=50)
    with pytest.raises(ConfigurationException):
        ExperimentConfig(scenario=spec, estimators=[EstimatorSpec("naive")], replicates=0)
    with pytest.raises(ConfigurationException):
        ExperimentConfig(scenario=spec, estimators=[])
    with pytest.raises(ConfigurationException):
        EstimatorSpec("bogus")


def test_experiment_digest_ignores_workers_and_output():
    spec = ScenarioSpec.default("Fig1", n=50)
    a = ExperimentConfig(scenario=spec, estimators=[EstimatorSpec("naive")], workers=1)
    b = ExperimentConfig(scenario=spec, estimators=[EstimatorSpec("naive")], workers=4, output="x.json")
    assert a.digest() == b.digest()
