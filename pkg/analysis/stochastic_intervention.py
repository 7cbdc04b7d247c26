"""
模块名称: stochastic_intervention.py
功能描述: 随机干预效应 δ(p1, p0) 的重要性加权估计、支撑检查与处理分布字面量解析

δ̂ = μ̂(p1) − μ̂(p0)，μ̂(p) 为以 w_i = p(A_i) / d_i 加权的结果均值：
    自归一化（默认）: Σ Y_i w_i / Σ w_i
    均值归一化:       (1/n) Σ Y_i w_i
d_i 在 oracle 模式下为 p(A_i | Z_i)（使用数据中的真实潜类别），
在 posterior 模式下为 Σ_z p̂(A_i | z)·p̂(z | A_i)。
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from core.constants import BOOTSTRAP_REPLICATES, SUPPORT_THRESHOLD, WEIGHT_FLOOR
from core.exceptions import (
    ConfigurationException,
    DataValidationException,
    FileOperationException,
    IdentificationException,
    WeightExplosionException,
)
from core.models import (
    Dataset,
    EstimateReport,
    FactorizedTreatmentModel,
    SIConfig,
    TreatmentDistribution,
    enumerate_patterns,
    pattern_index,
    pattern_label,
    parse_pattern,
)
from analysis.base import bootstrap, bootstrap_se, log_action, provenance
from analysis.factor_model import TreatmentModel, conditional_probabilities, posteriors
from utils.logger import get_logger

logger = get_logger(__name__)

NORMALIZATION_NOTE = (
    "估计量按总体均值归一化：自归一化时除以权重总和，否则除以 n（原始加权和未归一化）"
)


# ==================== 分布字面量 ====================

def _load_table(path: Path, m: int) -> TreatmentDistribution:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise FileOperationException(f"分布文件不存在: {path}", str(path))
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataValidationException(f"分布文件解析失败 ({path}): {e}")

    expected = [f"A{j + 1}" for j in range(m)] + ["p"]
    if list(frame.columns) != expected:
        raise DataValidationException(
            f"分布文件表头应为 {','.join(expected)}，实际为 {','.join(frame.columns)}", line=1
        )
    table = np.zeros(1 << m)
    seen = set()
    for row, record in enumerate(frame.itertuples(index=False), start=2):
        cells = list(record)
        if any(c not in ("0", "1") for c in cells[:m]):
            raise DataValidationException("处理取值必须为 0 或 1", line=row)
        try:
            prob = float(cells[m])
        except ValueError:
            raise DataValidationException(f"概率 `{cells[m]}` 不是数值", line=row, column="p")
        idx = int(pattern_index(np.array([[int(c) for c in cells[:m]]]))[0])
        if idx in seen:
            raise DataValidationException("处理组合重复出现", line=row)
        seen.add(idx)
        table[idx] = prob
    return TreatmentDistribution.from_table(table, m, source=f"table:{path}")


def parse_distribution(literal: str, m: int, base_dir: Optional[Union[str, Path]] = None) -> TreatmentDistribution:
    """
    解析处理分布字面量

    支持：
        prod:<p1,...,pm>   独立伯努利乘积
        table:<file.csv>   表头 A1..Am,p；未列出的组合概率为 0
        point:<101>        点质量

    Args:
        literal: 字面量
        m: 处理数
        base_dir: table 相对路径的基准目录

    Returns:
        TreatmentDistribution
    """
    kind, sep, body = literal.partition(":")
    if not sep or not body:
        raise ConfigurationException(f"无法解析分布 `{literal}`（应为 prod:... 或 table:...）", "distribution")
    kind = kind.strip().lower()
    if kind == "prod":
        try:
            marginals = [float(p) for p in body.split(",")]
        except ValueError:
            raise ConfigurationException(f"乘积分布参数必须为数值: `{body}`", "distribution")
        if len(marginals) != m:
            raise ConfigurationException(f"乘积分布需要 {m} 个边际概率，得到 {len(marginals)} 个", "distribution")
        return TreatmentDistribution.product(marginals)
    if kind == "table":
        path = Path(body)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return _load_table(path, m)
    if kind == "point":
        return TreatmentDistribution.point_mass(parse_pattern(body, m))
    raise ConfigurationException(f"未知分布类型 `{kind}`", "distribution")


# ==================== 支撑检查 ====================

@dataclass
class SupportReport:
    """p1、p0 的支撑是否落在拟合处理模型的支撑内"""
    passed: bool
    threshold: float
    offending: Dict[str, List[str]]
    min_probability: Dict[str, float]
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'passed': self.passed,
            'threshold': self.threshold,
            'offending': {k: list(v) for k, v in self.offending.items()},
            'min_probability': dict(self.min_probability),
            'notes': list(self.notes),
        }


def support_check(config: SIConfig, model: TreatmentModel, threshold: float = SUPPORT_THRESHOLD) -> SupportReport:
    """
    对 p1、p0 中概率为正的每个组合 a，检查可达类别（先验 > 0）上 min_z p̂(a|z) > threshold

    报告型操作：不满足时不抛异常，列出违规组合。
    """
    if config.p1.m != model.m:
        raise ConfigurationException(f"处理分布维度 {config.p1.m} 与模型 m={model.m} 不一致", "p1")
    patterns = enumerate_patterns(model.m)
    reachable = np.asarray(model.prior) > 0
    cond = conditional_probabilities(model, patterns)[:, reachable]
    floor = cond.min(axis=1)

    offending: Dict[str, List[str]] = {}
    min_probability: Dict[str, float] = {}
    notes: List[str] = []
    for name, dist in (("p1", config.p1), ("p0", config.p0)):
        table = dist.full_table()
        charged = table > 0
        bad = charged & ~(floor > threshold)
        offending[name] = [pattern_label(p) for p in patterns[bad]]
        min_probability[name] = float(floor[charged].min()) if np.any(charged) else float("nan")
        if np.count_nonzero(charged) == 1:
            label = pattern_label(patterns[charged][0])
            notes.append(f"{name} 为组合 {label} 上的点质量：μ̂({name}) 退化为该组合的重加权结果均值")
    passed = not any(offending.values())
    if not passed:
        logger.warning(f"随机干预支撑检查失败: {offending}")
    return SupportReport(passed, float(threshold), offending, min_probability, notes)


# ==================== 估计 ====================

def _denominators(dataset: Dataset, model: TreatmentModel, weight_mode: str) -> np.ndarray:
    """逐行 d_i"""
    patterns, inverse, _ = dataset.unique_patterns()
    cond = conditional_probabilities(model, patterns)
    if weight_mode == "oracle":
        if dataset.oracle_latent is None:
            raise ConfigurationException("oracle 权重模式需要数据集提供真实潜类别", "weight_mode")
        z = np.asarray(dataset.oracle_latent)
        if not np.all(np.mod(z, 1) == 0) or z.min() < 0 or z.max() >= model.k:
            raise ConfigurationException(f"真实潜类别必须是 [0, {model.k}) 内的整数", "oracle_latent")
        return cond[inverse, z.astype(np.int64)]
    mixture = np.sum(cond * posteriors(model, patterns), axis=1)
    return mixture[inverse]


def _check_denominators(d: np.ndarray) -> None:
    small = np.flatnonzero(~(d >= WEIGHT_FLOOR))
    if small.size:
        row = int(small[0])
        raise WeightExplosionException(row, float(d[row]))


def _weighted_mean(outcome: np.ndarray, weights: np.ndarray, normalize: bool) -> float:
    if normalize:
        mass = float(np.sum(weights))
        if mass == 0.0:
            raise IdentificationException("处理分布在观测到的组合上没有质量，自归一化无定义")
        return float(np.sum(outcome * weights)) / mass
    return float(np.sum(outcome * weights)) / outcome.shape[0]


def _weights(dist: TreatmentDistribution, treatments: np.ndarray, d: np.ndarray, truncation: Optional[float]):
    w = dist.prob(treatments) / d
    truncated = 0
    if truncation is not None:
        truncated = int(np.count_nonzero(w > truncation))
        w = np.minimum(w, truncation)
    return w, truncated


def _delta(dataset: Dataset, d: np.ndarray, config: SIConfig) -> Tuple[float, Dict[str, Any]]:
    w1, t1 = _weights(config.p1, dataset.treatments, d, config.truncation)
    w0, t0 = _weights(config.p0, dataset.treatments, d, config.truncation)
    mu1 = _weighted_mean(dataset.outcome, w1, config.normalize)
    mu0 = _weighted_mean(dataset.outcome, w0, config.normalize)
    info = {
        'mu_p1': mu1,
        'mu_p0': mu0,
        'weight_mass_p1': float(np.sum(w1)),
        'weight_mass_p0': float(np.sum(w0)),
        'max_weight': float(max(np.max(w1), np.max(w0))),
        'truncated': t1 + t0,
    }
    return mu1 - mu0, info


def _estimate(
    dataset: Dataset,
    model: TreatmentModel,
    config: SIConfig,
    method: str,
    replicates: int,
    seed: int,
) -> EstimateReport:
    dataset.require_binary()
    if dataset.m != model.m:
        raise ConfigurationException(f"模型的 m={model.m} 与数据集 m={dataset.m} 不一致", "m")
    support = support_check(config, model)
    if not support.passed:
        raise IdentificationException("处理分布的支撑超出拟合模型的支撑", support.to_dict())

    d = _denominators(dataset, model, config.weight_mode)
    _check_denominators(d)
    estimate, info = _delta(dataset, d, config)

    def statistic(index: np.ndarray) -> np.ndarray:
        value, _ = _delta(dataset.take(index), d[index], config)
        return np.array([value])

    if replicates:
        values, failures = bootstrap(statistic, dataset.n, replicates, seed)
        se = float(bootstrap_se(values)[0])
    else:
        failures, se = 0, 0.0

    notes = [NORMALIZATION_NOTE] + list(support.notes)
    if info['truncated']:
        message = f"{info['truncated']} 个权重被截断至 {config.truncation}"
        logger.warning(message)
        notes.append(message)
    if failures:
        notes.append(f"{failures} 个自助法副本失败")

    report = EstimateReport(
        estimand="delta",
        method=method,
        estimate=float(estimate),
        std_error=se,
        replicates=replicates - failures,
        contrast={'p1': config.p1.describe(), 'p0': config.p0.describe()},
        diagnostics={
            'weight_mode': config.weight_mode,
            'normalization': "self_normalized" if config.normalize else "mean",
            'truncation': config.truncation,
            'support': support.to_dict(),
            'min_denominator': float(d.min()),
            **info,
        },
        provenance=provenance(seed, {
            'p1': config.p1.to_dict(),
            'p0': config.p0.to_dict(),
            'weight_mode': config.weight_mode,
            'normalize': config.normalize,
            'truncation': config.truncation,
            'replicates': replicates,
        }),
        notes=notes,
    )
    log_action("ESTIMATE_DELTA", {
        'method': method,
        'mode': config.weight_mode,
        'estimate': report.estimate,
        'se': report.std_error,
    })
    return report


def estimate_delta(
    dataset: Dataset,
    model: TreatmentModel,
    config: SIConfig,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> EstimateReport:
    """
    随机干预效应 δ(p1, p0) 的重要性加权估计

    Args:
        dataset: 二值处理数据集
        model: 处理模型（oracle 模式下类别编号须与数据中的真实潜类别一致）
        config: 随机干预配置
        replicates: 自助法副本数（模型固定，重抽样行）
        seed: 自助法种子

    Returns:
        EstimateReport（estimand="delta"）

    Raises:
        IdentificationException: 支撑检查失败或权重质量为 0
        WeightExplosionException: 某行分母低于 1e-12
    """
    return _estimate(dataset, model, config, "si", replicates, seed)


def delta_from_factorized(
    dataset: Dataset,
    fmodel: FactorizedTreatmentModel,
    config: SIConfig,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> EstimateReport:
    """分解处理模型（处理间存在因果边）下的同一估计量"""
    if not isinstance(fmodel, FactorizedTreatmentModel):
        raise ConfigurationException("delta_from_factorized 需要分解处理模型", "model")
    return _estimate(dataset, fmodel, config, "si_factorized", replicates, seed)
