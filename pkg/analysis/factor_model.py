"""
模块名称: factor_model.py
功能描述: 潜类别因子模型：EM 拟合（多重启）、后验与替代混杂、标签规范化、可识别性预检

EM 在唯一处理组合及其计数上运行。通用引擎支持“分解”结构：
每个处理 A_j 可有若干排在其前面的父处理，条件概率表形状 (2^{|pa_j|}, k)；
潜类别模型即全部父节点为空的特例。
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import aiofiles
import numpy as np
from scipy.special import logsumexp

from core.constants import (
    EM_INIT_HIGH,
    EM_INIT_LOW,
    EM_MONOTONE_SLACK,
    INFORMATIVE_THRESHOLD,
    PARAM_CLAMP_EPS,
)
from core.exceptions import ConfigurationException, FileOperationException
from core.models import (
    Dataset,
    FactorizedTreatmentModel,
    FitConfig,
    FitMetadata,
    LatentClassModel,
    TreatmentDistribution,
    enumerate_patterns,
)
from core.rng import STREAM_EM_RESTART, make_generator
from analysis.base import log_action
from utils.logger import get_logger

logger = get_logger(__name__)

TreatmentModel = Union[LatentClassModel, FactorizedTreatmentModel]
Parents = Tuple[Tuple[int, ...], ...]

# 图 3 的分解结构：A2 ← A1，A3 ← A1
FIG3_PARENTS: Parents = ((), (0,), (0,), ())


# ==================== 结构工具 ====================

def _structure(model: TreatmentModel) -> Tuple[np.ndarray, Parents, Tuple[np.ndarray, ...]]:
    if isinstance(model, FactorizedTreatmentModel):
        return model.prior, model.parents, model.tables
    tables = tuple(model.cond[:, j].reshape(1, -1) for j in range(model.m))
    return model.prior, tuple(() for _ in range(model.m)), tables


def _cond_matrix(tables: Sequence[np.ndarray]) -> np.ndarray:
    """无父节点的 (1, k) 表拼回 cond，形状 (k, m)"""
    return np.vstack([np.asarray(t).reshape(1, -1) for t in tables]).T


def _parent_rows(patterns: np.ndarray, parents: Tuple[int, ...]) -> np.ndarray:
    if not parents:
        return np.zeros(patterns.shape[0], dtype=np.int64)
    weights = (1 << np.arange(len(parents) - 1, -1, -1)).astype(np.int64)
    return patterns[:, list(parents)] @ weights


def _log_conditional(patterns: np.ndarray, parents: Parents, tables: Sequence[np.ndarray]) -> np.ndarray:
    """log p(a | z)，形状 (U, k)"""
    k = tables[0].shape[1]
    out = np.zeros((patterns.shape[0], k))
    with np.errstate(divide="ignore"):
        for j, (pa, table) in enumerate(zip(parents, tables)):
            t = table[_parent_rows(patterns, pa)]
            out += np.where(patterns[:, j:j + 1] == 1, np.log(t), np.log1p(-t))
    return out


def _log_joint(patterns: np.ndarray, prior: np.ndarray, parents: Parents, tables: Sequence[np.ndarray]) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return _log_conditional(patterns, parents, tables) + np.log(prior)[None, :]


def _row_logsumexp(log_joint: np.ndarray) -> np.ndarray:
    """按行 logsumexp；先排序，结果与类别顺序无关"""
    with np.errstate(divide="ignore", invalid="ignore"):
        return logsumexp(np.sort(log_joint, axis=1), axis=1)


def _normalized_posterior(log_joint: np.ndarray, prior: np.ndarray) -> np.ndarray:
    lse = _row_logsumexp(log_joint)
    with np.errstate(invalid="ignore"):
        post = np.exp(log_joint - lse[:, None])
    # 模型下概率为 0 的组合：后验无定义，取先验
    impossible = ~np.isfinite(lse)
    if np.any(impossible):
        post[impossible] = prior
    return post / post.sum(axis=1, keepdims=True)


def _as_patterns(patterns: np.ndarray, m: int) -> np.ndarray:
    patterns = np.atleast_2d(np.asarray(patterns, dtype=np.int64))
    if patterns.shape[1] != m:
        raise ConfigurationException(f"处理组合长度为 {patterns.shape[1]}，模型要求 m={m}", "pattern")
    return patterns


# ==================== 后验 ====================

def posterior(model: TreatmentModel, a: Sequence[int]) -> np.ndarray:
    """
    单个处理组合的潜类别后验

    posterior(z) ∝ prior(z)·∏_j p(a_j | pa_j, z)
    """
    prior, parents, tables = _structure(model)
    patterns = _as_patterns(np.asarray(a).reshape(1, -1), model.m)
    return _normalized_posterior(_log_joint(patterns, prior, parents, tables), prior)[0]


def posteriors(model: TreatmentModel, patterns: np.ndarray) -> np.ndarray:
    """多个处理组合的后验，形状 (len, k)"""
    prior, parents, tables = _structure(model)
    patterns = _as_patterns(patterns, model.m)
    return _normalized_posterior(_log_joint(patterns, prior, parents, tables), prior)


def conditional_probabilities(model: TreatmentModel, patterns: np.ndarray) -> np.ndarray:
    """p(a | z)，形状 (len, k)"""
    _, parents, tables = _structure(model)
    patterns = _as_patterns(patterns, model.m)
    return np.exp(_log_conditional(patterns, parents, tables))


def pattern_probabilities(model: TreatmentModel, patterns: np.ndarray) -> np.ndarray:
    """模型隐含的组合概率 p(a) = Σ_z prior(z)·p(a|z)"""
    prior, parents, tables = _structure(model)
    patterns = _as_patterns(patterns, model.m)
    return np.exp(_row_logsumexp(_log_joint(patterns, prior, parents, tables)))


def log_likelihood(model: TreatmentModel, dataset: Dataset) -> float:
    """观测数据对数似然（对类别置换精确不变）"""
    dataset.require_binary()
    patterns, _, counts = dataset.unique_patterns()
    prior, parents, tables = _structure(model)
    patterns = _as_patterns(patterns, model.m)
    return float(counts @ _row_logsumexp(_log_joint(patterns, prior, parents, tables)))


@dataclass(eq=False)
class SubstituteConfounder:
    """替代混杂 Ẑ_i = E(Z_i | A_i)：逐行后验单纯形"""
    posteriors: np.ndarray          # (n, k)
    patterns: np.ndarray            # (U, m) 唯一组合
    pattern_posteriors: np.ndarray  # (U, k)
    inverse: np.ndarray             # (n,) 行 → 组合索引

    @property
    def k(self) -> int:
        return int(self.posteriors.shape[1])

    @property
    def expected_class(self) -> np.ndarray:
        """后验均值类别索引 E[Z|A]；k=2 时即类别 1 的后验概率"""
        return self.posteriors @ np.arange(self.k, dtype=float)

    def coordinates(self) -> np.ndarray:
        """回归用的后验坐标（类别 1..k-1）"""
        return self.posteriors[:, 1:]


def substitute_confounder(model: TreatmentModel, dataset: Dataset) -> SubstituteConfounder:
    """
    逐行计算替代混杂

    先在唯一组合上计算后验，再按行索引展开，相同组合的行取值逐位相同。
    """
    dataset.require_binary()
    if dataset.m != model.m:
        raise ConfigurationException(f"模型的 m={model.m} 与数据集 m={dataset.m} 不一致", "m")
    patterns, inverse, _ = dataset.unique_patterns()
    pattern_post = posteriors(model, patterns)
    return SubstituteConfounder(
        posteriors=pattern_post[inverse],
        patterns=patterns,
        pattern_posteriors=pattern_post,
        inverse=inverse,
    )


def conditional_distribution(model: LatentClassModel, z: int) -> TreatmentDistribution:
    """由拟合模型构造 p(A | Z=z) 的处理分布（用户指定的类别）"""
    if not 0 <= int(z) < model.k:
        raise ConfigurationException(f"类别 {z} 超出范围 [0, {model.k})", "z")
    if isinstance(model, FactorizedTreatmentModel):
        patterns = enumerate_patterns(model.m)
        probs = conditional_probabilities(model, patterns)[:, int(z)]
        return TreatmentDistribution.from_table(probs / probs.sum(), model.m, source=f"class:{z}")
    dist = TreatmentDistribution.product(model.cond[int(z)].tolist())
    dist.source = f"class:{z}"
    return dist


def sample_patterns(model: TreatmentModel, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """按模型抽样 n 行处理组合，返回 (组合, 潜类别)"""
    prior, parents, tables = _structure(model)
    z = rng.choice(prior.shape[0], size=n, p=prior)
    patterns = np.zeros((n, len(parents)), dtype=np.int64)
    for j, (pa, table) in enumerate(zip(parents, tables)):
        t = table[_parent_rows(patterns, pa), z]
        patterns[:, j] = (rng.random(n) < t).astype(np.int64)
    return patterns, z


# ==================== EM ====================

@dataclass
class _EMResult:
    prior: np.ndarray
    tables: List[np.ndarray]
    loglik: float
    iterations: int
    converged: bool
    trace: List[float] = field(default_factory=list)
    empty_cells: bool = False


def _estep(patterns, counts, prior, parents, tables):
    log_joint = _log_joint(patterns, prior, parents, tables)
    lse = _row_logsumexp(log_joint)
    loglik = float(counts @ lse)
    with np.errstate(invalid="ignore"):
        resp = np.exp(log_joint - lse[:, None])
    resp = np.nan_to_num(resp)
    return loglik, counts[:, None] * resp


def _mstep(patterns, weights, parents, tables):
    class_mass = weights.sum(axis=0)
    prior = class_mass / class_mass.sum()
    new_tables = []
    empty = False
    for j, (pa, table) in enumerate(zip(parents, tables)):
        rows = _parent_rows(patterns, pa)
        onehot = np.zeros((patterns.shape[0], table.shape[0]))
        onehot[np.arange(patterns.shape[0]), rows] = 1.0
        den = onehot.T @ weights
        num = onehot.T @ (weights * patterns[:, j:j + 1])
        occupied = den > 0
        empty = empty or not np.all(occupied)
        est = np.where(occupied, num / np.where(occupied, den, 1.0), table)
        new_tables.append(np.clip(est, PARAM_CLAMP_EPS, 1.0 - PARAM_CLAMP_EPS))
    return prior, new_tables, empty


def _run_em(patterns, counts, prior, parents, tables, config: FitConfig) -> _EMResult:
    """单次 EM；截断投影后的 M 步保持对数似然单调不减"""
    trace: List[float] = []
    prev = None
    converged = False
    iterations = 0
    empty = False
    for it in range(config.max_iter + 1):
        loglik, weights = _estep(patterns, counts, prior, parents, tables)
        trace.append(loglik)
        if prev is not None:
            if loglik < prev - EM_MONOTONE_SLACK * max(1.0, abs(prev)):
                logger.warning(f"EM 对数似然下降: {prev:.12g} -> {loglik:.12g}")
            if abs(loglik - prev) <= config.tol * abs(prev):
                converged = True
                break
        if it == config.max_iter:
            break
        prior, tables, empty = _mstep(patterns, weights, parents, tables)
        iterations += 1
        prev = loglik
    return _EMResult(prior, list(tables), trace[-1], iterations, converged, trace, empty)


def _random_start(rng: np.random.Generator, k: int, shapes: Sequence[int]):
    prior = rng.dirichlet(np.ones(k))
    tables = [rng.uniform(EM_INIT_LOW, EM_INIT_HIGH, size=(rows, k)) for rows in shapes]
    return prior, tables


def _closed_form_single(patterns, counts, parents) -> Tuple[np.ndarray, List[np.ndarray], bool]:
    """k=1：条件伯努利频率"""
    weights = counts.astype(float).reshape(-1, 1)
    tables = []
    empty = False
    for j, pa in enumerate(parents):
        rows = _parent_rows(patterns, pa)
        size = 1 << len(pa)
        den = np.bincount(rows, weights=weights[:, 0], minlength=size)
        num = np.bincount(rows, weights=weights[:, 0] * patterns[:, j], minlength=size)
        occupied = den > 0
        empty = empty or not np.all(occupied)
        tables.append(np.where(occupied, num / np.where(occupied, den, 1.0), 0.5).reshape(size, 1))
    return np.ones(1), tables, empty


def _free_parameters(k: int, parents: Parents) -> int:
    return (k - 1) + k * sum(1 << len(pa) for pa in parents)


def fit_pattern_counts(
    patterns: np.ndarray,
    counts: np.ndarray,
    k: int,
    parents: Parents,
    config: FitConfig,
    init: Optional[TreatmentModel] = None,
) -> Tuple[np.ndarray, Tuple[np.ndarray, ...], FitMetadata]:
    """
    在唯一组合计数上拟合分解潜类别模型（多重启取最优）

    Args:
        patterns: 唯一组合 (U, m)
        counts: 每个组合的行数
        k: 类别数
        parents: 各处理的父节点
        config: EM 配置
        init: 可选热启动模型，作为额外候选最先参与比较

    Returns:
        (prior, tables, metadata)，尚未规范化
    """
    patterns = np.asarray(patterns, dtype=np.int64)
    counts = np.asarray(counts, dtype=float)
    n = float(counts.sum())
    m = patterns.shape[1]
    if k < 1:
        raise ConfigurationException("类别数 k 必须至少为 1", "k")
    if k > (1 << m):
        raise ConfigurationException(f"k={k} 超过 2^m={1 << m}，模型不可识别", "k")
    if n < k:
        raise ConfigurationException(f"样本量 n={int(n)} 小于类别数 k={k}", "k")

    flags = []
    if patterns.shape[0] == 1:
        flags.append("no_variation")

    single_prior, single_tables, single_empty = _closed_form_single(patterns, counts, parents)
    if k == 1:
        clipped = [np.clip(t, PARAM_CLAMP_EPS, 1.0 - PARAM_CLAMP_EPS) for t in single_tables]
        if any(np.any(c != t) for c, t in zip(clipped, single_tables)):
            flags.append("clamped_parameters")
        if single_empty:
            flags.append("empty_cell")
        loglik, _ = _estep(patterns, counts, single_prior, parents, clipped)
        metadata = FitMetadata(loglik=loglik, iterations=0, restarts=0, flags=tuple(flags), trace=(loglik,))
        return single_prior, tuple(clipped), metadata

    shapes = [1 << len(pa) for pa in parents]
    candidates = []
    if init is not None:
        init_prior, init_parents, init_tables = _structure(init)
        if init_parents != tuple(parents) or init_prior.shape[0] != k:
            raise ConfigurationException("热启动模型的结构与拟合设定不一致", "init")
        candidates.append((init_prior.copy(), [t.copy() for t in init_tables]))
    for r in range(config.restarts):
        candidates.append(_random_start(make_generator(config.seed, STREAM_EM_RESTART, r), k, shapes))

    best: Optional[_EMResult] = None
    best_index = 0
    for index, (prior0, tables0) in enumerate(candidates):
        result = _run_em(patterns, counts, prior0, parents, tables0, config)
        if best is None or result.loglik > best.loglik:
            best, best_index = result, index

    if any(np.any((t <= PARAM_CLAMP_EPS) | (t >= 1.0 - PARAM_CLAMP_EPS)) for t in best.tables):
        flags.append("clamped_parameters")
    if np.any(best.prior == 0.0):
        flags.append("empty_class")
    if best.empty_cells:
        flags.append("empty_cell")
    if not best.converged:
        flags.append("not_converged")

    # 相对单类别闭式解没有 BIC 改进：实际只有一个有效类别
    single_ll, _ = _estep(patterns, counts, single_prior, parents,
                          [np.clip(t, PARAM_CLAMP_EPS, 1.0 - PARAM_CLAMP_EPS) for t in single_tables])
    penalty = (_free_parameters(k, parents) - _free_parameters(1, parents)) * math.log(max(n, 2.0))
    if 2.0 * (best.loglik - single_ll) < penalty:
        flags.append("single_effective_class")

    metadata = FitMetadata(
        loglik=best.loglik,
        iterations=best.iterations,
        restarts=len(candidates),
        best_restart=best_index,
        converged=best.converged,
        flags=tuple(flags),
        trace=tuple(best.trace),
    )
    return best.prior, tuple(best.tables), metadata


def fit_em(dataset: Dataset, k: int, config: Optional[FitConfig] = None) -> LatentClassModel:
    """
    用多重启 EM 拟合潜类别模型

    Args:
        dataset: 二值处理数据集
        k: 类别数
        config: EM 配置

    Returns:
        规范化后的最优模型
    """
    config = config or FitConfig()
    dataset.require_binary()
    patterns, _, counts = dataset.unique_patterns()
    parents = tuple(() for _ in range(dataset.m))
    prior, tables, metadata = fit_pattern_counts(patterns, counts, k, parents, config)
    model = canonicalize(LatentClassModel(prior=prior, cond=_cond_matrix(tables), metadata=metadata))
    log_action("FIT_EM", {
        'k': k, 'm': dataset.m, 'n': dataset.n, 'restarts': metadata.restarts,
        'best': metadata.best_restart, 'iters': metadata.iterations,
        'loglik': metadata.loglik, 'flags': ",".join(metadata.flags) or "-",
    })
    return model


def fit_factorized(
    dataset: Dataset,
    parents: Parents,
    k: int = 2,
    config: Optional[FitConfig] = None,
) -> FactorizedTreatmentModel:
    """按给定父节点结构拟合分解处理模型"""
    config = config or FitConfig()
    dataset.require_binary()
    if len(parents) != dataset.m:
        raise ConfigurationException(f"父节点结构长度应为 m={dataset.m}", "parents")
    for j, pa in enumerate(parents):
        if any(p >= j or p < 0 for p in pa):
            raise ConfigurationException(f"A{j + 1} 的父节点必须排在其前面", "parents")
    patterns, _, counts = dataset.unique_patterns()
    prior, tables, metadata = fit_pattern_counts(patterns, counts, k, tuple(parents), config)
    model = canonicalize(FactorizedTreatmentModel(prior=prior, parents=parents, tables=tables, metadata=metadata))
    log_action("FIT_FACTORIZED", {
        'k': k, 'm': dataset.m, 'n': dataset.n, 'iters': metadata.iterations,
        'loglik': metadata.loglik, 'flags': ",".join(metadata.flags) or "-",
    })
    return model


def refit(model: TreatmentModel, patterns: np.ndarray, counts: np.ndarray, config: FitConfig) -> TreatmentModel:
    """以已有模型为热启动、按相同结构在新计数上重新拟合"""
    prior, parents, _ = _structure(model)
    new_prior, tables, metadata = fit_pattern_counts(patterns, counts, prior.shape[0], parents, config, init=model)
    if isinstance(model, FactorizedTreatmentModel):
        return canonicalize(FactorizedTreatmentModel(prior=new_prior, parents=parents, tables=tables, metadata=metadata))
    return canonicalize(LatentClassModel(prior=new_prior, cond=_cond_matrix(tables), metadata=metadata))


# ==================== 规范化 ====================

def canonicalize(model: TreatmentModel) -> TreatmentModel:
    """
    重排类别标签：按第一个参数升序，依次以后续参数、最后以先验打破平局

    潜类别模型的排序键为 cond(·,1), cond(·,2), ..., prior；
    分解模型依处理顺序展开各条件概率表。稳定排序，幂等。
    """
    prior, parents, tables = _structure(model)
    keys = [t[row] for t in tables for row in range(t.shape[0])] + [prior]
    order = np.lexsort(tuple(reversed(keys)))
    if isinstance(model, FactorizedTreatmentModel):
        return FactorizedTreatmentModel(
            prior=prior[order],
            parents=parents,
            tables=tuple(t[:, order] for t in tables),
            metadata=model.metadata,
        )
    return LatentClassModel(prior=prior[order], cond=model.cond[order], metadata=model.metadata)


def permute_classes(model: TreatmentModel, order: Sequence[int]) -> TreatmentModel:
    """按给定置换重排类别（标签交换测试用）"""
    order = np.asarray(order, dtype=np.int64)
    prior, parents, tables = _structure(model)
    if sorted(order.tolist()) != list(range(prior.shape[0])):
        raise ConfigurationException("置换必须覆盖全部类别", "order")
    if isinstance(model, FactorizedTreatmentModel):
        return FactorizedTreatmentModel(prior=prior[order], parents=parents,
                                        tables=tuple(t[:, order] for t in tables), metadata=model.metadata)
    return LatentClassModel(prior=prior[order], cond=model.cond[order], metadata=model.metadata)


# ==================== 可识别性预检 ====================

@dataclass
class IdentifiabilityReport:
    """可识别性预检报告"""
    k: int
    m: int
    passed: bool
    failures: List[str] = field(default_factory=list)
    checks: Dict[str, Any] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'k': self.k,
            'm': self.m,
            'passed': self.passed,
            'failures': list(self.failures),
            'checks': dict(self.checks),
            'notes': list(self.notes),
        }


def _best_three_split(k: int, m: int) -> Tuple[int, Tuple[int, int, int]]:
    best = (-1, (0, 0, 0))
    for m1 in range(1, m - 1):
        for m2 in range(1, m - m1):
            m3 = m - m1 - m2
            score = sum(min(k, 1 << size) for size in (m1, m2, m3))
            if score > best[0]:
                best = (score, (m1, m2, m3))
    return best


def identifiability_precheck(
    k: int,
    m: int,
    model: Optional[LatentClassModel] = None,
    threshold: float = INFORMATIVE_THRESHOLD,
) -> IdentifiabilityReport:
    """
    潜类别模型可识别性预检（报告型，不抛异常）

    检查项：m ≥ 3；参数计数 k−1+k·m ≤ 2^m−1；三分组秩界
    Σ_g min(k, 2^{m_g}) ≥ 2k+2；给定模型时各处理有信息量且类别互不相同。
    """
    report = IdentifiabilityReport(k=k, m=m, passed=True)
    report.notes.append(
        f"信息量阈值 {threshold} 是忠实性假设的代理指标，不构成对忠实性的检验"
    )
    if k < 1:
        report.failures.append("k 必须至少为 1")
        report.passed = False
        return report
    if k == 1:
        report.notes.append("单类别模型平凡可识别")
        report.checks['single_class'] = True
        return report

    report.checks['min_treatments'] = m >= 3
    if m < 3:
        report.failures.append(f"处理数过少：m={m} < 3")

    free = k - 1 + k * m
    cells = (1 << m) - 1 if m < 63 else float("inf")
    report.checks['parameter_count'] = {'parameters': free, 'free_cells': cells, 'ok': free <= cells}
    if free > cells:
        report.failures.append(f"参数个数 {free} 超过组合自由度 {cells}")

    if m >= 3:
        score, split = _best_three_split(k, m)
        ok = score >= 2 * k + 2
        report.checks['kruskal_bound'] = {'score': score, 'required': 2 * k + 2, 'split': list(split), 'ok': ok}
        if not ok:
            report.failures.append(f"三分组秩界不满足：{score} < {2 * k + 2}")

    if model is not None:
        if model.k != k or model.m != m:
            report.failures.append(f"模型维度 (k={model.k}, m={model.m}) 与检查设定不一致")
        else:
            spread = np.ptp(model.cond, axis=0)
            uninformative = [f"A{j + 1}" for j in range(m) if spread[j] <= threshold]
            report.checks['informative'] = {f"A{j + 1}": float(spread[j]) for j in range(m)}
            if uninformative:
                report.failures.append(f"处理无信息量（类别间差异 ≤ {threshold}）: {', '.join(uninformative)}")
            same = [
                (z1, z2) for z1, z2 in itertools.combinations(range(k), 2)
                if float(np.max(np.abs(model.cond[z1] - model.cond[z2]))) <= threshold
            ]
            report.checks['distinct_classes'] = not same
            if same:
                report.failures.append(
                    "类别不可区分: " + ", ".join(f"({z1},{z2})" for z1, z2 in same)
                )

    report.passed = not report.failures
    return report


# ==================== 持久化 ====================

def model_from_dict(data: Dict[str, Any]) -> TreatmentModel:
    """按是否含 parents 字段还原两类模型"""
    if 'parents' in data:
        loglik = data.get('loglik')
        return FactorizedTreatmentModel(
            prior=data['prior'],
            parents=tuple(tuple(pa) for pa in data['parents']),
            tables=tuple(np.array(t, dtype=float) for t in data['tables']),
            metadata=FitMetadata(
                loglik=float("nan") if loglik is None else float(loglik),
                iterations=int(data.get('iters', 0)),
                flags=tuple(data.get('flags', ())),
            ),
        )
    return LatentClassModel.from_dict(data)


async def save_model(model: TreatmentModel, path: Union[str, Path]) -> Path:
    """异步写出模型 JSON"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(path, 'w', encoding='utf-8') as f:
            await f.write(json.dumps(model.to_dict(), ensure_ascii=False, indent=2, sort_keys=True))
    except OSError as e:
        raise FileOperationException(f"无法写入模型文件: {e}", str(path))
    logger.info(f"模型已保存: {path}")
    return path


def load_model(path: Union[str, Path]) -> TreatmentModel:
    """读取模型 JSON"""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise FileOperationException(f"模型文件不存在: {path}", str(path))
    except json.JSONDecodeError as e:
        raise ConfigurationException(f"模型 JSON 解析失败: {e}")
    return model_from_dict(data)
