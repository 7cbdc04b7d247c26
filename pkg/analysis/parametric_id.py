"""
模块名称: parametric_id.py
功能描述: 加性结果模型的参数化识别：线性独立检验、加性估计、朴素回归、图 3 分解模型与条件效应
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from core.constants import BOOTSTRAP_REPLICATES, RANK_TOL
from core.exceptions import ConfigurationException, IdentificationException
from core.linalg import least_squares, rank_report
from core.models import (
    BasisSpec,
    Dataset,
    EstimateReport,
    FactorizedTreatmentModel,
    FitConfig,
    enumerate_patterns,
)
from analysis.base import contrast_record, log_action, provenance, regression_bootstrap
from analysis.factor_model import (
    FIG3_PARENTS,
    TreatmentModel,
    canonicalize,
    fit_factorized,
    pattern_probabilities,
    posteriors,
    substitute_confounder,
)
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class LinearIndependenceReport:
    """线性独立（秩）检验报告"""
    columns: List[str]
    singular_values: List[float]
    rank: int
    full_rank: bool
    tolerance: float
    sigma_known: bool
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'columns': list(self.columns),
            'singular_values': [float(s) for s in self.singular_values],
            'rank': int(self.rank),
            'full_rank': bool(self.full_rank),
            'tolerance': float(self.tolerance),
            'sigma_known': bool(self.sigma_known),
            'notes': list(self.notes),
        }


def _latent_summary(model: TreatmentModel, post: np.ndarray, basis: BasisSpec) -> np.ndarray:
    """E{g(Z) | A}：后验对 g(类别索引) 的期望"""
    scores = np.asarray(basis.g(np.arange(model.k, dtype=float)), dtype=float)
    return post @ scores


def _basis_columns(treatments: np.ndarray, basis: BasisSpec) -> np.ndarray:
    cols = [np.asarray(basis.basis_for(j)(treatments[:, j].astype(float)), dtype=float)
            for j in range(treatments.shape[1])]
    return np.column_stack(cols) if cols else np.empty((treatments.shape[0], 0))


def _column_names(m: int, include_latent: bool) -> List[str]:
    names = ["const"] + [f"A{j + 1}" for j in range(m)]
    if include_latent:
        names.append("sigma")
    return names


def population_design(model: TreatmentModel, basis: Optional[BasisSpec] = None):
    """
    全部 2^m 组合上的设计矩阵 [1, b_1(a_1)..b_m(a_m), E{g(Z)|A=a}] 与模型隐含概率 p(a)

    σ 已知时省略最后一列。
    """
    basis = basis or BasisSpec()
    patterns = enumerate_patterns(model.m)
    columns = [np.ones(patterns.shape[0]), _basis_columns(patterns, basis)]
    include_latent = basis.sigma_known is None
    if include_latent:
        columns.append(_latent_summary(model, posteriors(model, patterns), basis))
    design = np.column_stack(columns)
    return design, pattern_probabilities(model, patterns), _column_names(model.m, include_latent)


def test_linear_independence(model: TreatmentModel, basis: Optional[BasisSpec] = None) -> LinearIndependenceReport:
    """
    线性独立检验：设计行按 sqrt(p(a)) 加权后做奇异值分解，
    最小奇异值 > 1e-8 × 最大奇异值 即满秩
    """
    basis = basis or BasisSpec()
    design, probs, names = population_design(model, basis)
    weighted = design * np.sqrt(probs)[:, None]
    rr = rank_report(weighted, RANK_TOL)
    notes = []
    if not rr.full_rank:
        if basis.sigma_known is None:
            notes.append("E{g(Z)|A} 与处理基函数线性相关，加性模型不可识别")
        else:
            notes.append("处理基函数在模型支撑上线性相关")
    report = LinearIndependenceReport(
        columns=names,
        singular_values=rr.singular_values,
        rank=rr.rank,
        full_rank=rr.full_rank,
        tolerance=RANK_TOL,
        sigma_known=basis.sigma_known is not None,
        notes=notes,
    )
    log_action("RANK_TEST", {'rank': rr.rank, 'columns': len(names), 'full': rr.full_rank})
    return report


# 名称以 test_ 开头，避免被 pytest 收集
test_linear_independence.__test__ = False


def population_regression(
    model: TreatmentModel,
    mean_response: np.ndarray,
    basis: Optional[BasisSpec] = None,
) -> Dict[str, float]:
    """
    总体层面的加权回归：权重为模型隐含 p(a)，响应为给定的 E[Y | A=a]（字典序）

    Returns:
        列名 → 系数
    """
    basis = basis or BasisSpec()
    report = test_linear_independence(model, basis)
    if not report.full_rank:
        raise IdentificationException("秩检验未通过，总体回归不可识别", report.to_dict())
    design, probs, names = population_design(model, basis)
    response = np.asarray(mean_response, dtype=float)
    if basis.sigma_known is not None:
        post = posteriors(model, enumerate_patterns(model.m))
        response = response - basis.sigma_known * _latent_summary(model, post, basis)
    coef = least_squares(design, response, weights=probs)
    return {name: float(c) for name, c in zip(names, coef)}


def _contrast_weights(m: int, basis: BasisSpec, a, a_prime, width: int) -> Optional[np.ndarray]:
    if a is None or a_prime is None:
        return None
    a_arr = np.asarray(a, dtype=float).reshape(1, -1)
    b_arr = np.asarray(a_prime, dtype=float).reshape(1, -1)
    if a_arr.shape[1] != m or b_arr.shape[1] != m:
        raise ConfigurationException(f"对比处理组合长度应为 m={m}", "contrast")
    w = np.zeros(width)
    w[1:m + 1] = (_basis_columns(a_arr, basis) - _basis_columns(b_arr, basis))[0]
    return w


def estimate_additive(
    dataset: Dataset,
    model: TreatmentModel,
    basis: Optional[BasisSpec] = None,
    a: Optional[Sequence[int]] = None,
    a_prime: Optional[Sequence[int]] = None,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> EstimateReport:
    """
    加性结果模型 E{Y(a)|Z} = Σ β_j b_j(a_j) + σ g(Z) 的估计

    Y 对 [1, b_j(A_j), E{g(Z)|A}] 做最小二乘；σ 已知时先减去 σ·E{g(Z)|A} 再仅对基函数回归。
    给定对比 (a, a′) 时估计值为 Σ β̂_j (b_j(a_j) − b_j(a′_j))，否则为 σ̂（σ 已知时为 NaN）。
    """
    basis = basis or BasisSpec()
    dataset.require_binary()
    model = canonicalize(model)
    check = test_linear_independence(model, basis)
    if not check.full_rank:
        raise IdentificationException("线性独立检验未通过：加性模型不可识别", check.to_dict())

    sub = substitute_confounder(model, dataset)
    latent = _latent_summary(model, sub.posteriors, basis)
    include_latent = basis.sigma_known is None
    columns = [np.ones(dataset.n), _basis_columns(dataset.treatments, basis)]
    response = dataset.outcome
    if include_latent:
        columns.append(latent)
    else:
        response = dataset.outcome - basis.sigma_known * latent
    design = np.column_stack(columns)
    names = _column_names(dataset.m, include_latent)
    weights = _contrast_weights(dataset.m, basis, a, a_prime, design.shape[1])
    fit = regression_bootstrap(
        design, response, names, contrast=weights,
        replicates=replicates, seed=seed, context="加性结果回归",
    )

    if weights is not None:
        estimand, estimate, se = "ate", fit.contrast, fit.contrast_se
    else:
        estimand = "sigma"
        estimate = float(fit.coefficients[-1]) if include_latent else float("nan")
        se = float(fit.std_errors[-1]) if include_latent else float("nan")

    notes = ["g 取类别索引（规范化标签顺序）"]
    if not include_latent:
        notes.append(f"σ 已知 = {basis.sigma_known}，设计中省略 E{{g(Z)|A}} 列")
    report = EstimateReport(
        estimand=estimand,
        method="parametric",
        estimate=estimate,
        std_error=se if replicates else 0.0,
        replicates=fit.replicates,
        contrast=None if weights is None else contrast_record(np.asarray(a, dtype=int), np.asarray(a_prime, dtype=int)),
        coefficients=fit.coefficient_dict(),
        coefficient_se=fit.se_dict(),
        diagnostics={'rank_test': check.to_dict()},
        provenance=provenance(seed, {'k': model.k, 'sigma_known': basis.sigma_known, 'replicates': replicates}),
        notes=notes,
    )
    log_action("ESTIMATE_ADDITIVE", {'k': model.k, 'estimate': estimate, 'sigma_known': basis.sigma_known})
    return report


def naive_regression(
    dataset: Dataset,
    a: Optional[Sequence[int]] = None,
    a_prime: Optional[Sequence[int]] = None,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> EstimateReport:
    """不调整混杂的基准：Y 对 (1, A) 的最小二乘"""
    dataset.require_binary()
    design = np.column_stack([np.ones(dataset.n), dataset.treatments.astype(float)])
    names = _column_names(dataset.m, include_latent=False)
    weights = _contrast_weights(dataset.m, BasisSpec(), a, a_prime, design.shape[1])
    fit = regression_bootstrap(
        design, dataset.outcome, names, contrast=weights,
        replicates=replicates, seed=seed, context="朴素回归",
    )
    estimate = fit.contrast if weights is not None else float(np.sum(fit.coefficients[1:]))
    se = fit.contrast_se if weights is not None else float("nan")
    return EstimateReport(
        estimand="ate" if weights is not None else "coefficients",
        method="naive",
        estimate=estimate,
        std_error=se if replicates else 0.0,
        replicates=fit.replicates,
        contrast=None if weights is None else contrast_record(np.asarray(a, dtype=int), np.asarray(a_prime, dtype=int)),
        coefficients=fit.coefficient_dict(),
        coefficient_se=fit.se_dict(),
        provenance=provenance(seed, {'replicates': replicates}),
        notes=["未调整混杂，存在遗漏变量偏差"],
    )


# ==================== 图 3：处理间因果关系 ====================

def fit_factorized_model(dataset: Dataset, k: int = 2, config: Optional[FitConfig] = None) -> FactorizedTreatmentModel:
    """
    拟合 p(Z)p(A1|Z)p(A2|A1,Z)p(A3|A1,Z)p(A4|Z)

    仅适用于 m=4 的图 3 结构。
    """
    if dataset.m != 4:
        raise ConfigurationException(f"分解模型要求 m=4，当前 m={dataset.m}", "m")
    return fit_factorized(dataset, FIG3_PARENTS, k=k, config=config)


def estimate_conditional_effects(
    dataset: Dataset,
    fmodel: FactorizedTreatmentModel,
    include_latent: bool = True,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> EstimateReport:
    """
    给定 A1 时 (A2, A3, A4) 的效应

    Y 对 [1, A1..A4, E(Z|A)] 回归；β̂_1 标记为非因果总效应。
    估计值为 β̂_2 + β̂_3 + β̂_4（A1 固定时 (A2,A3,A4) 从 0 全部变为 1）。
    include_latent=False 时省略 E(Z|A) 列（无混杂退化情形）。
    """
    dataset.require_binary()
    if dataset.m != 4 or fmodel.m != 4:
        raise ConfigurationException("条件效应估计要求 m=4", "m")
    fmodel = canonicalize(fmodel)
    check = None
    if include_latent:
        check = test_linear_independence(fmodel)
        if not check.full_rank:
            raise IdentificationException("线性独立检验未通过：E(Z|A) 与处理线性相关", check.to_dict())

    columns = [np.ones(dataset.n), dataset.treatments.astype(float)]
    if include_latent:
        columns.append(substitute_confounder(fmodel, dataset).expected_class)
    design = np.column_stack(columns)
    names = _column_names(4, include_latent)
    weights = np.zeros(design.shape[1])
    weights[2:5] = 1.0
    fit = regression_bootstrap(
        design, dataset.outcome, names, contrast=weights,
        replicates=replicates, seed=seed, context="条件效应回归",
    )
    report = EstimateReport(
        estimand="conditional_effects_given_A1",
        method="parametric_factorized",
        estimate=fit.contrast,
        std_error=fit.contrast_se if replicates else 0.0,
        replicates=fit.replicates,
        coefficients=fit.coefficient_dict(),
        coefficient_se=fit.se_dict(),
        diagnostics={
            'coefficient_labels': {
                'A1': 'non_causal_total',
                'A2': 'effect_given_A1',
                'A3': 'effect_given_A1',
                'A4': 'effect_given_A1',
            },
            'rank_test': None if check is None else check.to_dict(),
            'model_flags': list(fmodel.metadata.flags),
        },
        provenance=provenance(seed, {'parents': fmodel.parents, 'include_latent': include_latent,
                                     'replicates': replicates}),
        notes=["β̂_1 不是 A1 的因果总效应（A1 通过 A2、A3 的路径未被计入）"],
    )
    log_action("ESTIMATE_CONDITIONAL", {'estimate': report.estimate, 'include_latent': include_latent})
    return report
