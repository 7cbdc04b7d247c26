"""
模块名称: deconfounder.py
功能描述: 两步去混杂估计、条件独立诊断（成对卡方 + 参数自助法拟合优度）、重叠退化审计
"""

import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np
from scipy.stats import chi2_contingency

from core.constants import (
    BOOTSTRAP_REPLICATES,
    DIAGNOSTIC_ALPHA,
    GOF_BOOTSTRAP,
    GOF_BOOTSTRAP_RESTARTS,
    MIN_EXPECTED_COUNT,
    PATTERN_SAMPLING_LIMIT,
)
from core.exceptions import ConfigurationException
from core.models import (
    Dataset,
    FactorizedTreatmentModel,
    DiagnosticReport,
    EstimateReport,
    FitConfig,
    enumerate_patterns,
    parse_pattern,
    pattern_label,
)
from core.rng import STREAM_GOF, derive_seed, make_generator
from analysis.base import contrast_record, log_action, provenance, regression_bootstrap
from analysis.factor_model import (
    TreatmentModel,
    canonicalize,
    pattern_probabilities,
    refit,
    sample_patterns,
    substitute_confounder,
)
from utils.logger import get_logger

logger = get_logger(__name__)


# ==================== 去混杂估计 ====================

def _design(dataset: Dataset, coords: np.ndarray):
    names = ["const"] + list(dataset.labels) + [f"Zhat_{z + 1}" for z in range(coords.shape[1])]
    design = np.column_stack([np.ones(dataset.n), dataset.treatments.astype(float), coords])
    return design, names


def _coerce_pattern(pattern, m: int, name: str) -> np.ndarray:
    if isinstance(pattern, str):
        return np.array(parse_pattern(pattern, m), dtype=float)
    arr = np.asarray(pattern, dtype=float).reshape(-1)
    if arr.shape[0] != m:
        raise ConfigurationException(f"处理组合 `{name}` 长度应为 m={m}", name)
    return arr


def estimate_ate(
    dataset: Dataset,
    model: TreatmentModel,
    a: Sequence[int],
    a_prime: Sequence[int],
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> EstimateReport:
    """
    两步去混杂：以后验坐标（类别 1..k−1）作为替代混杂，Y 对 (1, A, Ẑ) 做最小二乘

    Args:
        dataset: 二值处理数据集
        model: 已拟合并规范化的处理模型
        a, a_prime: 对比的处理组合
        replicates: 自助法副本数（模型参数固定，仅重算后验与回归）
        seed: 自助法种子

    Returns:
        EstimateReport，估计值为 Σ_j coef_j (a_j − a′_j)
    """
    dataset.require_binary()
    a_vec = _coerce_pattern(a, dataset.m, "a")
    a_prime_vec = _coerce_pattern(a_prime, dataset.m, "a_prime")
    diff = a_vec - a_prime_vec

    model = canonicalize(model)
    sub = substitute_confounder(model, dataset)
    design, names = _design(dataset, sub.coordinates())
    weights = np.zeros(design.shape[1])
    weights[1:dataset.m + 1] = diff
    fit = regression_bootstrap(
        design, dataset.outcome, names, contrast=weights,
        replicates=replicates, seed=seed, context="去混杂回归",
    )

    notes = ["自助法固定因子模型参数，仅重算后验与回归"]
    if fit.failures:
        notes.append(f"{fit.failures} 个自助法副本因共线失败")
    report = EstimateReport(
        estimand="ate",
        method="deconfounder",
        estimate=fit.contrast,
        std_error=fit.contrast_se if replicates else 0.0,
        replicates=fit.replicates,
        contrast=contrast_record(a_vec.astype(int), a_prime_vec.astype(int)),
        coefficients=fit.coefficient_dict(),
        coefficient_se=fit.se_dict(),
        diagnostics={'k': model.k, 'model_flags': list(model.metadata.flags)},
        provenance=provenance(seed, {'k': model.k, 'prior': model.prior, 'replicates': replicates}),
        notes=notes,
    )
    log_action("ESTIMATE_ATE", {'method': 'deconfounder', 'estimate': report.estimate, 'se': report.std_error})
    return report


# ==================== 条件独立诊断 ====================

def hard_assign(model: TreatmentModel, dataset: Dataset) -> np.ndarray:
    """每行分配到后验最大的类别（平局取较小索引）"""
    sub = substitute_confounder(model, dataset)
    return np.argmax(sub.pattern_posteriors, axis=1)[sub.inverse]


def _pairwise_tests(dataset: Dataset, labels: np.ndarray, k: int):
    m = dataset.m
    tests: List[Dict[str, Any]] = []
    cells_low = 0
    cells_total = 0
    per_treatment: Dict[int, List[float]] = {j: [] for j in range(m)}
    for z in range(k):
        block = dataset.treatments[labels == z]
        for j1, j2 in itertools.combinations(range(m), 2):
            table = np.zeros((2, 2))
            if block.shape[0]:
                np.add.at(table, (block[:, j1], block[:, j2]), 1.0)
            degenerate = np.any(table.sum(axis=0) == 0) or np.any(table.sum(axis=1) == 0)
            if degenerate:
                stat, p = 0.0, 1.0
                expected = np.zeros((2, 2))
            else:
                stat, p, _, expected = chi2_contingency(table, correction=False)
                stat, p = float(stat), float(p)
            cells_total += 4
            cells_low += int(np.sum(expected < MIN_EXPECTED_COUNT))
            per_treatment[j1].append(p)
            per_treatment[j2].append(p)
            tests.append({
                'class': z,
                'pair': [dataset.labels[j1], dataset.labels[j2]],
                'statistic': stat,
                'p_value': p,
                'degenerate': bool(degenerate),
                'counts': table.astype(int).tolist(),
            })
    combined = {}
    for j in range(m):
        ps = per_treatment[j]
        combined[dataset.labels[j]] = float(min(1.0, len(ps) * min(ps))) if ps else 1.0
    return combined, tests, cells_low, cells_total


def g_squared(observed: np.ndarray, expected: np.ndarray) -> float:
    """G² = 2 Σ O log(O/E)，O=0 的格子贡献 0"""
    positive = observed > 0
    return float(2.0 * np.sum(observed[positive] * np.log(observed[positive] / expected[positive])))


def _gof_statistic(model: TreatmentModel, patterns: np.ndarray, counts: np.ndarray) -> float:
    n = counts.sum()
    expected = n * pattern_probabilities(model, patterns)
    return g_squared(counts.astype(float), expected)


def _bootstrap_counts(model: TreatmentModel, n: int, m: int, rng: np.random.Generator):
    """参数自助法样本：m 小时在全部组合上多项抽样，否则按行抽样"""
    if m <= PATTERN_SAMPLING_LIMIT:
        patterns = enumerate_patterns(m)
        probs = pattern_probabilities(model, patterns)
        counts = rng.multinomial(n, probs / probs.sum())
        keep = counts > 0
        return patterns[keep], counts[keep]
    rows, _ = sample_patterns(model, n, rng)
    patterns, counts = np.unique(rows, axis=0, return_counts=True)
    return patterns, counts


def diagnose_conditional_independence(
    dataset: Dataset,
    model: TreatmentModel,
    alpha: float = DIAGNOSTIC_ALPHA,
    bootstrap_count: int = GOF_BOOTSTRAP,
    seed: int = 0,
) -> DiagnosticReport:
    """
    条件独立诊断

    (i) 硬分配后在每个类别内对全部处理对做 2×2 卡方独立检验，按处理 Bonferroni 合并；
    (ii) 潜类别模型相对饱和多项模型的 G² 统计量，参数自助法 p 值
         p = (1 + #{G*≥G}) / (B + 1)，每次重拟合以原模型热启动并另加随机重启。
    """
    dataset.require_binary()
    if not 0 < alpha < 1:
        raise ConfigurationException("`alpha` 必须位于 (0,1)", "alpha")
    if bootstrap_count < 0:
        raise ConfigurationException("自助法次数不能为负", "bootstrap")

    labels = hard_assign(model, dataset)
    combined, tests, cells_low, cells_total = _pairwise_tests(dataset, labels, model.k)
    low_expected = cells_total > 0 and cells_low > cells_total / 2

    patterns, _, counts = dataset.unique_patterns()
    statistic = _gof_statistic(model, patterns, counts)

    exceed = 0
    done = 0
    for b in range(bootstrap_count):
        rng = make_generator(seed, STREAM_GOF, b)
        boot_patterns, boot_counts = _bootstrap_counts(model, dataset.n, dataset.m, rng)
        config = FitConfig(restarts=GOF_BOOTSTRAP_RESTARTS, seed=derive_seed(seed, STREAM_GOF, b))
        try:
            fitted = refit(model, boot_patterns, boot_counts, config)
        except ConfigurationException as e:
            logger.debug(f"拟合优度自助法副本 {b} 失败: {e}")
            continue
        done += 1
        if _gof_statistic(fitted, boot_patterns, boot_counts) >= statistic:
            exceed += 1
    p_value = (1.0 + exceed) / (done + 1.0)

    cell_counts = {pattern_label(p): int(c) for p, c in zip(patterns, counts)}
    free_cells = (1 << dataset.m) - 1 if dataset.m < 63 else 0
    notes = ["潜变量替代混杂是处理的确定性函数，字面意义的条件独立检验不适定；以拟合优度检验代替"]
    if low_expected:
        notes.append("超过一半格子的期望频数低于 5，卡方近似可能不可靠")
        logger.warning(f"诊断: {cells_low}/{cells_total} 个格子期望频数低于 {MIN_EXPECTED_COUNT}")

    report = DiagnosticReport(
        pairwise_p_values=combined,
        gof_statistic=statistic,
        gof_p_value=float(p_value),
        bootstrap_count=done,
        cell_counts=cell_counts,
        alpha=alpha,
        degrees_of_freedom=max(0, free_cells - _parameter_count(model)),
        low_expected_warning=bool(low_expected),
        pair_tests=tests,
        notes=notes,
    )
    log_action("DIAGNOSE", {'k': model.k, 'gof': statistic, 'p': p_value, 'boot': done})
    return report


def _parameter_count(model: TreatmentModel) -> int:
    if isinstance(model, FactorizedTreatmentModel):
        return (model.k - 1) + model.k * sum(t.shape[0] for t in model.tables)
    return (model.k - 1) + model.k * model.m


# ==================== 重叠退化审计 ====================

@dataclass
class OverlapDegeneracyReport:
    """替代混杂在处理给定下的退化审计"""
    pattern_variance: Dict[str, float]
    pattern_values: Dict[str, List[float]]
    distinct_values: int
    observed_patterns: int
    degenerate: bool
    notes: List[str] = field(default_factory=list)

    @property
    def max_within_variance(self) -> float:
        return max(self.pattern_variance.values()) if self.pattern_variance else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'pattern_variance': dict(self.pattern_variance),
            'pattern_values': {k: list(v) for k, v in self.pattern_values.items()},
            'distinct_values': int(self.distinct_values),
            'observed_patterns': int(self.observed_patterns),
            'degenerate': bool(self.degenerate),
            'notes': list(self.notes),
        }


def _shifted_variance(block: np.ndarray) -> float:
    """以首行为偏移的方差，取值相同的行方差精确为 0"""
    d = block - block[0]
    return float(np.max(np.mean(d * d, axis=0) - np.mean(d, axis=0) ** 2))


def check_overlap_degeneracy(dataset: Dataset, model: TreatmentModel) -> OverlapDegeneracyReport:
    """
    按处理组合分组，报告组内替代混杂方差与全体不同 Ẑ 取值个数

    两者同时满足（组内方差全为 0，不同取值数 = 观测到的组合数）时标记退化。
    """
    sub = substitute_confounder(model, dataset)
    variance = {}
    values = {}
    for u, pattern in enumerate(sub.patterns):
        label = pattern_label(pattern)
        variance[label] = _shifted_variance(sub.posteriors[sub.inverse == u])
        values[label] = sub.pattern_posteriors[u].tolist()
    distinct = int(np.unique(sub.posteriors, axis=0).shape[0])
    observed = int(sub.patterns.shape[0])
    degenerate = all(v == 0.0 for v in variance.values()) and distinct == observed
    notes = []
    if degenerate:
        notes.append("替代混杂在给定处理下退化：Ẑ 是观测处理的确定性函数")
    elif distinct < observed:
        notes.append(f"不同组合共享相同的 Ẑ 取值（{distinct} < {observed}）")
    log_action("OVERLAP_AUDIT", {'distinct': distinct, 'patterns': observed, 'degenerate': degenerate})
    return OverlapDegeneracyReport(
        pattern_variance=variance,
        pattern_values=values,
        distinct_values=distinct,
        observed_patterns=observed,
        degenerate=degenerate,
        notes=notes,
    )
