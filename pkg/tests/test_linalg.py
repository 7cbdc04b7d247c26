import numpy as np
import pytest

from core.exceptions import IdentificationException
from core.linalg import collinear_columns, constant_columns, ensure_identified, least_squares, rank_report


def test_rank_report_counts_relative_singular_values():
    report = rank_report(np.diag([1.0, 0.5, 1e-12]))
    assert report.rank == 2
    assert not report.full_rank
    assert report.singular_values[0] == pytest.approx(1.0)


def test_removing_a_column_never_increases_rank():
    rng = np.random.default_rng(3)
    design = rng.normal(size=(20, 4))
    design[:, 3] = design[:, 0] + design[:, 1]
    full = rank_report(design).rank
    for j in range(4):
        assert rank_report(np.delete(design, j, axis=1)).rank <= full


def test_constant_column_is_reported_with_intercept():
    design = np.column_stack([np.ones(5), np.arange(5.0), np.full(5, 0.3)])
    assert constant_columns(design, ["const", "A1", "Zhat_1"]) == ["Zhat_1"]
    with pytest.raises(IdentificationException) as info:
        ensure_identified(design, ["const", "A1", "Zhat_1"], "回归")
    assert info.value.detail == {"collinear": ["const", "Zhat_1"]}


def test_exact_linear_dependence_names_involved_columns():
    x = np.arange(6.0)
    design = np.column_stack([np.ones(6), x, x ** 2, 2.0 * x + 1.0])
    involved = collinear_columns(design, ["const", "x", "x2", "lin"])
    assert involved is not None
    assert "lin" in involved and "x" in involved
    assert "x2" not in involved


def test_weighted_least_squares_matches_normal_equations():
    rng = np.random.default_rng(11)
    design = np.column_stack([np.ones(30), rng.normal(size=30)])
    response = 1.0 + 2.0 * design[:, 1] + rng.normal(size=30)
    weights = rng.uniform(0.5, 2.0, size=30)
    coef = least_squares(design, response, weights)
    w = np.diag(weights)
    expected = np.linalg.solve(design.T @ w @ design, design.T @ w @ response)
    assert coef == pytest.approx(expected, abs=1e-10)
