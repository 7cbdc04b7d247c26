"""
模块名称: iv.py
功能描述: 非参数工具变量线性系统（构建、秩检查、求解 q）与控制函数两阶段估计及其重叠检查
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from core.constants import (
    BOOTSTRAP_REPLICATES,
    CF_BINS,
    CF_COVERAGE,
    CF_DEGREE,
    CF_MIN_STRATUM,
    CF_WARN_STRATUM,
    IV_PATTERN_LIMIT,
    RANK_TOL,
)
from core.exceptions import (
    ConfigurationException,
    DataValidationException,
    EnumerationLimitException,
    IdentificationException,
)
from core.linalg import ensure_identified, least_squares
from core.models import (
    ControlFunctionFit,
    Dataset,
    EstimateReport,
    IVSystem,
    enumerate_patterns,
    pattern_index,
    pattern_label,
)
from analysis.base import bootstrap, bootstrap_se, contrast_record, log_action, provenance
from utils.logger import get_logger

logger = get_logger(__name__)


# ==================== 工具变量线性系统 ====================

def _instrument_tables(treatments: np.ndarray, outcome: np.ndarray, instrument: np.ndarray, levels: int, m: int):
    counts = np.bincount(instrument, minlength=levels)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise DataValidationException(
            f"工具变量水平 {', '.join(str(int(l)) for l in missing)} 没有任何观测", column='W'
        )
    response = np.bincount(instrument, weights=outcome, minlength=levels) / counts
    cells = pattern_index(treatments) * levels + instrument
    joint = np.bincount(cells, minlength=(1 << m) * levels).reshape(1 << m, levels)
    return response, joint / counts[None, :], counts


def build_iv_system(dataset: Dataset, levels: Optional[int] = None) -> IVSystem:
    """
    由数据估计 E(Y|W=l) 与 P[a,l] = p(A=a|W=l)

    Args:
        dataset: 含工具变量的二值处理数据集
        levels: 声明的水平数 L（默认取数据集声明值或 max(W)+1）

    Returns:
        IVSystem
    """
    dataset.require_binary()
    if dataset.instrument is None:
        raise ConfigurationException("数据集缺少工具变量列 W", "W")
    if dataset.m > IV_PATTERN_LIMIT:
        raise EnumerationLimitException(dataset.m, IV_PATTERN_LIMIT)
    levels = int(levels) if levels is not None else dataset.levels
    if levels < 1:
        raise ConfigurationException("工具变量水平数必须至少为 1", "levels")
    if int(dataset.instrument.max()) >= levels:
        raise DataValidationException(f"工具变量取值超出声明的 L={levels}", column='W')
    response, transition, counts = _instrument_tables(
        dataset.treatments, dataset.outcome, dataset.instrument, levels, dataset.m
    )
    return IVSystem(response=response, transition=transition, counts=counts, m=dataset.m)


@dataclass
class IVRankReport:
    """工具变量系统的秩检查报告"""
    verdict: str
    singular_values: List[float]
    rank: int
    levels: int
    patterns: int
    notes: List[str] = field(default_factory=list)

    @property
    def identified(self) -> bool:
        return self.verdict == "identified"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'verdict': self.verdict,
            'identified': self.identified,
            'singular_values': [float(s) for s in self.singular_values],
            'rank': int(self.rank),
            'levels': int(self.levels),
            'patterns': int(self.patterns),
            'notes': list(self.notes),
        }


def rank_check(system: IVSystem) -> IVRankReport:
    """
    Pᵀ 的奇异值与识别结论

    结论依次判定：under_determined（L < 2^m）、instrument_irrelevant（秩 1）、
    rank_deficient（秩 < 2^m）、identified。
    """
    patterns = 1 << system.m
    s = np.linalg.svd(system.transition.T, compute_uv=False)
    s_max = float(s[0]) if s.size else 0.0
    rank = int(np.sum(s > RANK_TOL * s_max)) if s_max > 0 else 0
    notes = []
    if system.levels < patterns:
        verdict = "under_determined"
        notes.append(
            f"L={system.levels} < 2^m={patterns}：识别要求工具变量的水平数多于 2^m"
        )
    elif rank <= 1 and patterns > 1:
        verdict = "instrument_irrelevant"
        notes.append("各水平下 p(A|W) 相同，工具变量与处理无关")
    elif rank < patterns:
        verdict = "rank_deficient"
        notes.append(f"Pᵀ 的秩 {rank} < 2^m={patterns}")
    else:
        verdict = "identified"
    if system.levels == patterns:
        notes.append("L = 2^m：按恰好识别处理（精确求解）")
    return IVRankReport(
        verdict=verdict,
        singular_values=s.tolist(),
        rank=rank,
        levels=system.levels,
        patterns=patterns,
        notes=notes,
    )


def solve_q(system: IVSystem) -> np.ndarray:
    """
    求解 E(Y|W=l) = Σ_a q(a)·P[a,l]

    L = 2^m 时精确求解，L > 2^m 时按各水平样本量加权最小二乘。

    Returns:
        按字典序排列的 q(a)
    """
    report = rank_check(system)
    if not report.identified:
        raise IdentificationException(
            f"工具变量系统不可识别（{report.verdict}）: {'; '.join(report.notes)}",
            report.to_dict(),
        )
    if system.levels == (1 << system.m):
        return np.linalg.solve(system.transition.T, system.response)
    return least_squares(system.transition.T, system.response, weights=system.counts.astype(float))


def estimate_iv(
    dataset: Dataset,
    a: Optional[Sequence[int]] = None,
    a_prime: Optional[Sequence[int]] = None,
    levels: Optional[int] = None,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> EstimateReport:
    """
    工具变量估计 q(a) 及对比 q(a) − q(a′)（默认全 1 对全 0），附自助法标准误
    """
    system = build_iv_system(dataset, levels)
    q = solve_q(system)
    m = dataset.m
    a = tuple(a) if a is not None else (1,) * m
    a_prime = tuple(a_prime) if a_prime is not None else (0,) * m
    if len(a) != m or len(a_prime) != m:
        raise ConfigurationException(f"对比处理组合长度应为 m={m}", "contrast")
    ia = int(pattern_index(np.array([a]))[0])
    ib = int(pattern_index(np.array([a_prime]))[0])
    L = system.levels

    def statistic(index: np.ndarray) -> np.ndarray:
        response, transition, counts = _instrument_tables(
            dataset.treatments[index], dataset.outcome[index], dataset.instrument[index], L, m
        )
        qb = solve_q(IVSystem(response=response, transition=transition, counts=counts, m=m))
        return np.append(qb, qb[ia] - qb[ib])

    if replicates:
        values, failures = bootstrap(statistic, dataset.n, replicates, seed)
        se = bootstrap_se(values)
        if se.shape[0] != q.shape[0] + 1:
            se = np.full(q.shape[0] + 1, np.nan)
    else:
        failures, se = 0, np.full(q.shape[0] + 1, np.nan)

    labels = [f"q_{pattern_label(p)}" for p in enumerate_patterns(m)]
    notes = []
    if failures:
        notes.append(f"{failures} 个自助法副本因缺失水平或秩亏失败")
    report = EstimateReport(
        estimand="q_contrast",
        method="iv",
        estimate=float(q[ia] - q[ib]),
        std_error=float(se[-1]) if replicates else 0.0,
        replicates=replicates - failures,
        contrast=contrast_record(a, a_prime),
        coefficients={name: float(v) for name, v in zip(labels, q)},
        coefficient_se={name: float(v) for name, v in zip(labels, se[:-1])},
        diagnostics={'rank_check': rank_check(system).to_dict(), 'level_counts': system.counts.tolist()},
        provenance=provenance(seed, {'levels': L, 'replicates': replicates}),
        notes=notes,
    )
    log_action("ESTIMATE_IV", {'levels': L, 'estimate': report.estimate, 'se': report.std_error})
    return report


# ==================== 控制函数 ====================

def _polynomial_terms(degree: int) -> Tuple[Tuple[int, int], ...]:
    """(A 的幂, C 的幂)，p+q ≤ degree；按总次数、再按 A 的幂降序"""
    terms = []
    for total in range(degree + 1):
        for pa in range(total, -1, -1):
            terms.append((pa, total - pa))
    return tuple(terms)


def _term_matrix(treatment: np.ndarray, control: np.ndarray, terms) -> np.ndarray:
    return np.column_stack([treatment ** pa * control ** pc for pa, pc in terms])


def midrank_control(treatment: np.ndarray, instrument: np.ndarray) -> Tuple[np.ndarray, Dict[int, int], List[str]]:
    """
    每个工具变量层内的经验 CDF：C = (秩 − 0.5) / n_s（稳定序号，平局按出现顺序）

    Returns:
        (C, 各层样本量, 警告)
    """
    control = np.empty(treatment.shape[0])
    sizes: Dict[int, int] = {}
    warnings: List[str] = []
    for level in np.unique(instrument):
        idx = np.flatnonzero(instrument == level)
        n_s = idx.shape[0]
        sizes[int(level)] = int(n_s)
        if n_s < CF_MIN_STRATUM:
            raise DataValidationException(
                f"工具变量层 W={int(level)} 只有 {n_s} 行，至少需要 {CF_MIN_STRATUM} 行", column='W'
            )
        if n_s < CF_WARN_STRATUM:
            warnings.append(f"工具变量层 W={int(level)} 只有 {n_s} 行（少于 {CF_WARN_STRATUM}）")
        ranks = rankdata(treatment[idx], method="ordinal")
        control[idx] = (ranks - 0.5) / n_s
    return control, sizes, warnings


def _require_cf_data(dataset: Dataset) -> None:
    if dataset.instrument is None:
        raise ConfigurationException("控制函数需要工具变量列 W", "W")
    if dataset.m != 1:
        raise ConfigurationException("控制函数只支持单一连续处理", "treatments")


def control_function_fit(dataset: Dataset, degree: int = CF_DEGREE) -> ControlFunctionFit:
    """
    两阶段控制函数

    第一阶段：层内中位秩经验 CDF 得到 C_i；
    第二阶段：Y 对 A^p·C^q（p+q ≤ degree）最小二乘。
    """
    _require_cf_data(dataset)
    if degree < 1:
        raise ConfigurationException("第二阶段多项式次数必须至少为 1", "degree")
    treatment = dataset.treatments[:, 0].astype(float)
    control, sizes, warnings = midrank_control(treatment, dataset.instrument)
    for message in warnings:
        logger.warning(message)
    terms = _polynomial_terms(degree)
    design = _term_matrix(treatment, control, terms)
    fit = ControlFunctionFit(
        control=control,
        coefficients=np.zeros(len(terms)),
        terms=terms,
        stratum_sizes=sizes,
        degree=degree,
        warnings=warnings,
    )
    ensure_identified(design, fit.term_names(), "控制函数第二阶段")
    fit.coefficients = least_squares(design, dataset.outcome)
    log_action("FIT_CF", {'strata': len(sizes), 'degree': degree, 'n': dataset.n})
    return fit


def cf_ate(fit: ControlFunctionFit, a: float, a_prime: float) -> float:
    """ATE = mean_i [ f(a, C_i) − f(a′, C_i) ]"""
    n = fit.control.shape[0]
    high = _term_matrix(np.full(n, float(a)), fit.control, fit.terms)
    low = _term_matrix(np.full(n, float(a_prime)), fit.control, fit.terms)
    return float(np.mean((high - low) @ fit.coefficients))


def estimate_control_function(
    dataset: Dataset,
    a: float = 1.0,
    a_prime: float = 0.0,
    degree: int = CF_DEGREE,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> EstimateReport:
    """控制函数 ATE，自助法副本在重抽样的层内重新计算 C"""
    fit = control_function_fit(dataset, degree)
    estimate = cf_ate(fit, a, a_prime)

    def statistic(index: np.ndarray) -> np.ndarray:
        boot = control_function_fit(dataset.take(index), degree)
        return np.append(boot.coefficients, cf_ate(boot, a, a_prime))

    names = fit.term_names()
    if replicates:
        values, failures = bootstrap(statistic, dataset.n, replicates, seed)
        se = bootstrap_se(values)
        if se.shape[0] != len(names) + 1:
            se = np.full(len(names) + 1, np.nan)
    else:
        failures, se = 0, np.full(len(names) + 1, np.nan)

    report = EstimateReport(
        estimand="ate",
        method="cf",
        estimate=estimate,
        std_error=float(se[-1]) if replicates else 0.0,
        replicates=replicates - failures,
        contrast={'a': float(a), 'a_prime': float(a_prime)},
        coefficients={name: float(c) for name, c in zip(names, fit.coefficients)},
        coefficient_se={name: float(s) for name, s in zip(names, se[:-1])},
        diagnostics={'stratum_sizes': {str(k): v for k, v in fit.stratum_sizes.items()}},
        provenance=provenance(seed, {'degree': degree, 'replicates': replicates}),
        notes=list(fit.warnings),
    )
    log_action("ESTIMATE_CF", {'estimate': estimate, 'se': report.std_error})
    return report


@dataclass
class CFOverlapReport:
    """控制函数重叠检查：各 A 分箱内 C 覆盖的边际十分位区间比例"""
    bins: int
    coverage_threshold: float
    overall_range: Tuple[float, float]
    bin_coverage: List[float]
    bin_ranges: List[Tuple[float, float]]
    flagged_bins: List[int]
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.flagged_bins

    def to_dict(self) -> Dict[str, Any]:
        return {
            'bins': self.bins,
            'coverage_threshold': self.coverage_threshold,
            'overall_range': list(self.overall_range),
            'bin_coverage': list(self.bin_coverage),
            'bin_ranges': [list(r) for r in self.bin_ranges],
            'flagged_bins': list(self.flagged_bins),
            'passed': self.passed,
            'notes': list(self.notes),
        }


def cf_overlap_check(
    fit: ControlFunctionFit,
    dataset: Dataset,
    bins: int = CF_BINS,
    coverage: float = CF_COVERAGE,
) -> CFOverlapReport:
    """
    按 A 的分位数分箱，检查每箱内 C 命中的边际 C 十分位区间比例；低于阈值的箱被标记
    """
    _require_cf_data(dataset)
    if bins < 1:
        raise ConfigurationException("分箱数必须至少为 1", "bins")
    control = fit.control
    treatment = dataset.treatments[:, 0].astype(float)
    overall = (float(control.min()), float(control.max()))
    if bins == 1:
        return CFOverlapReport(1, coverage, overall, [1.0], [overall], [], ["单一分箱，平凡覆盖"])

    decile_edges = np.quantile(control, np.linspace(0.0, 1.0, 11))[1:-1]
    decile = np.searchsorted(decile_edges, control, side="right")
    bin_edges = np.quantile(treatment, np.linspace(0.0, 1.0, bins + 1))[1:-1]
    bin_index = np.clip(np.searchsorted(bin_edges, treatment, side="right"), 0, bins - 1)

    covered: List[float] = []
    ranges: List[Tuple[float, float]] = []
    flagged: List[int] = []
    for b in range(bins):
        mask = bin_index == b
        if not np.any(mask):
            covered.append(0.0)
            ranges.append((float("nan"), float("nan")))
            flagged.append(b)
            continue
        share = np.unique(decile[mask]).shape[0] / 10.0
        covered.append(float(share))
        ranges.append((float(control[mask].min()), float(control[mask].max())))
        if share < coverage:
            flagged.append(b)
    notes = []
    if flagged:
        notes.append(f"{len(flagged)} 个处理分箱内 C 的支撑不足边际十分位的 {coverage:.0%}")
        logger.warning(f"控制函数重叠检查: 分箱 {flagged} 覆盖不足")
    return CFOverlapReport(bins, coverage, overall, covered, ranges, flagged, notes)
