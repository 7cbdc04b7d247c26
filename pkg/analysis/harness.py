"""
模块名称: harness.py
功能描述: 配置驱动的蒙特卡洛实验：逐副本生成、拟合、估计、诊断，汇总并输出报告

第 r 个副本的种子为 derive_seed(base_seed, STREAM_REPLICATE, r)；
副本之间没有共享状态，并行与顺序执行结果逐位一致，汇总按副本编号进行。
"""

import asyncio
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import aiofiles
import numpy as np
import pandas as pd

from core.constants import DIAGNOSTIC_ALPHA, EM_RESTARTS, GOF_BOOTSTRAP
from core.exceptions import ConfigurationException, DeconfBaseException, FileOperationException
from core.models import (
    Dataset,
    EstimatorSpec,
    EstimatorSummary,
    ExperimentConfig,
    FitConfig,
    MCSummary,
    ScenarioSpec,
    SIConfig,
    parse_pattern,
)
from core.rng import STREAM_REPLICATE, derive_seed
from analysis.base import log_action, read_toml
from analysis.deconfounder import diagnose_conditional_independence, estimate_ate
from analysis.factor_model import FIG3_PARENTS, fit_em, fit_factorized
from analysis.iv import estimate_control_function, estimate_iv
from analysis.parametric_id import estimate_additive, estimate_conditional_effects, naive_regression
from analysis.scenarios import generate, true_ate, true_cf_slope, true_delta, true_treatment_model
from analysis.stochastic_intervention import delta_from_factorized, estimate_delta, parse_distribution
from utils.formatters import create_progress_bar
from utils.logger import get_logger
from utils.system_info import format_snapshot, resource_snapshot
from utils.validators import validate_experiment_config

logger = get_logger(__name__)

REPLICATE_COLUMNS = [
    'replicate', 'seed', 'estimator', 'method', 'estimate', 'std_error',
    'oracle', 'p_value', 'rejected', 'error',
]
LONG_METRICS = ['estimate', 'std_error', 'oracle', 'p_value']


def replicate_seed(base_seed: int, r: int) -> int:
    """第 r 个副本的种子"""
    return derive_seed(base_seed, STREAM_REPLICATE, r)


def estimator_labels(estimators: List[EstimatorSpec]) -> List[str]:
    """估计器在汇总中的名称：settings.label，否则名称；重名时追加序号"""
    labels = []
    for spec in estimators:
        base = str(spec.settings.get('label', spec.name))
        label = base
        n = 2
        while label in labels:
            label = f"{base}#{n}"
            n += 1
        labels.append(label)
    return labels


# ==================== 单个估计器 ====================

class _ReplicateContext:
    """一个副本内的数据、情景与拟合模型缓存"""

    def __init__(self, spec: ScenarioSpec, dataset: Dataset, seed: int, bootstrap: int):
        self.spec = spec
        self.dataset = dataset
        self.seed = seed
        self.bootstrap = bootstrap
        self._models: Dict[Tuple, Any] = {}

    def fit_config(self, settings: Dict[str, Any]) -> FitConfig:
        return FitConfig(restarts=int(settings.get('restarts', EM_RESTARTS)), seed=self.seed)

    def latent_model(self, settings: Dict[str, Any]):
        k = int(settings.get('k', 2))
        key = ('latent', k, int(settings.get('restarts', EM_RESTARTS)))
        if key not in self._models:
            self._models[key] = fit_em(self.dataset, k, self.fit_config(settings))
        return self._models[key]

    def factorized_model(self, settings: Dict[str, Any]):
        k = int(settings.get('k', 2))
        key = ('factorized', k, int(settings.get('restarts', EM_RESTARTS)))
        if key not in self._models:
            self._models[key] = fit_factorized(self.dataset, FIG3_PARENTS, k, self.fit_config(settings))
        return self._models[key]

    def contrast(self, settings: Dict[str, Any]) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        m = self.dataset.m
        a = parse_pattern(str(settings.get('a', "1" * m)), m)
        a_prime = parse_pattern(str(settings.get('a_prime', "0" * m)), m)
        return a, a_prime

    def si_config(self, settings: Dict[str, Any]) -> SIConfig:
        m = self.dataset.m
        return SIConfig(
            p1=parse_distribution(str(settings.get('p1', "prod:" + ",".join(["0.8"] * m))), m),
            p0=parse_distribution(str(settings.get('p0', "prod:" + ",".join(["0.2"] * m))), m),
            weight_mode=str(settings.get('weights', "oracle")),
            normalize=bool(settings.get('normalize', True)),
            truncation=settings.get('truncation'),
        )


def _run_deconfounder(ctx: _ReplicateContext, settings: Dict[str, Any]):
    a, a_prime = ctx.contrast(settings)
    report = estimate_ate(ctx.dataset, ctx.latent_model(settings), a, a_prime, ctx.bootstrap, ctx.seed)
    return report.estimate, report.std_error, true_ate(ctx.spec, a, a_prime), None, None


def _run_parametric(ctx: _ReplicateContext, settings: Dict[str, Any]):
    if settings.get('factorized'):
        report = estimate_conditional_effects(
            ctx.dataset, ctx.factorized_model(settings),
            include_latent=bool(settings.get('include_latent', True)),
            replicates=ctx.bootstrap, seed=ctx.seed,
        )
        return report.estimate, report.std_error, float(np.sum(ctx.spec.beta[1:4])), None, None
    a, a_prime = ctx.contrast(settings)
    report = estimate_additive(
        ctx.dataset, ctx.latent_model(settings), a=a, a_prime=a_prime,
        replicates=ctx.bootstrap, seed=ctx.seed,
    )
    return report.estimate, report.std_error, true_ate(ctx.spec, a, a_prime), None, None


def _run_naive(ctx: _ReplicateContext, settings: Dict[str, Any]):
    a, a_prime = ctx.contrast(settings)
    report = naive_regression(ctx.dataset, a, a_prime, ctx.bootstrap, ctx.seed)
    return report.estimate, report.std_error, true_ate(ctx.spec, a, a_prime), None, None


def _run_iv(ctx: _ReplicateContext, settings: Dict[str, Any]):
    a, a_prime = ctx.contrast(settings)
    report = estimate_iv(ctx.dataset, a, a_prime, levels=ctx.spec.levels,
                         replicates=ctx.bootstrap, seed=ctx.seed)
    return report.estimate, report.std_error, true_ate(ctx.spec, a, a_prime), None, None


def _run_cf(ctx: _ReplicateContext, settings: Dict[str, Any]):
    a = float(settings.get('a', 1.0))
    a_prime = float(settings.get('a_prime', 0.0))
    report = estimate_control_function(
        ctx.dataset, a, a_prime, degree=int(settings.get('degree', 2)),
        replicates=ctx.bootstrap, seed=ctx.seed,
    )
    return report.estimate, report.std_error, true_cf_slope(ctx.spec) * (a - a_prime), None, None


def _run_si(ctx: _ReplicateContext, settings: Dict[str, Any]):
    config = ctx.si_config(settings)
    model = true_treatment_model(ctx.spec) if config.weight_mode == "oracle" else ctx.latent_model(settings)
    report = estimate_delta(ctx.dataset, model, config, ctx.bootstrap, ctx.seed)
    return report.estimate, report.std_error, true_delta(ctx.spec, config.p1, config.p0), None, None


def _run_si_factorized(ctx: _ReplicateContext, settings: Dict[str, Any]):
    config = ctx.si_config(settings)
    if config.weight_mode == "oracle":
        model = true_treatment_model(ctx.spec)
    else:
        model = ctx.factorized_model(settings)
    report = delta_from_factorized(ctx.dataset, model, config, ctx.bootstrap, ctx.seed)
    return report.estimate, report.std_error, true_delta(ctx.spec, config.p1, config.p0), None, None


def _run_diagnose(ctx: _ReplicateContext, settings: Dict[str, Any]):
    report = diagnose_conditional_independence(
        ctx.dataset, ctx.latent_model(settings),
        alpha=float(settings.get('alpha', DIAGNOSTIC_ALPHA)),
        bootstrap_count=int(settings.get('bootstrap_count', GOF_BOOTSTRAP)),
        seed=ctx.seed,
    )
    return report.gof_statistic, None, None, report.gof_p_value, report.rejected


RUNNERS: Dict[str, Callable] = {
    'deconfounder': _run_deconfounder,
    'parametric': _run_parametric,
    'naive': _run_naive,
    'iv': _run_iv,
    'cf': _run_cf,
    'si': _run_si,
    'si_factorized': _run_si_factorized,
    'diagnose': _run_diagnose,
}


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


# ==================== 副本 ====================

def run_replicate(config_data: Dict[str, Any], r: int, seed: Optional[int] = None) -> List[Dict[str, Any]]:
    """
    执行一个副本：生成数据后依次运行每个估计器

    顶层函数，可被进程池序列化调用。任一估计器失败只记录在该行的 error 中。

    Args:
        config_data: ExperimentConfig.to_dict() 的结果
        r: 副本编号
        seed: 覆盖该副本的种子（默认由基础种子派生）

    Returns:
        每个估计器一行
    """
    config = ExperimentConfig.from_dict(config_data)
    seed = replicate_seed(config.base_seed, r) if seed is None else int(seed)
    labels = estimator_labels(config.estimators)
    rows: List[Dict[str, Any]] = []

    try:
        spec = config.scenario.with_seed(seed)
        ctx = _ReplicateContext(spec, generate(spec), seed, config.bootstrap)
        setup_error = None
    except DeconfBaseException as e:
        ctx, setup_error = None, f"{type(e).__name__}: {e}"

    for label, estimator in zip(labels, config.estimators):
        row = {
            'replicate': r, 'seed': seed, 'estimator': label, 'method': estimator.name,
            'estimate': None, 'std_error': None, 'oracle': None,
            'p_value': None, 'rejected': None, 'error': setup_error,
        }
        if ctx is not None:
            try:
                estimate, se, oracle, p_value, rejected = RUNNERS[estimator.name](ctx, estimator.settings)
                row.update({
                    'estimate': _finite_or_none(estimate),
                    'std_error': _finite_or_none(se),
                    'oracle': _finite_or_none(oracle),
                    'p_value': _finite_or_none(p_value),
                    'rejected': None if rejected is None else bool(rejected),
                })
            except (DeconfBaseException, np.linalg.LinAlgError) as e:
                row['error'] = f"{type(e).__name__}: {e}"
                logger.warning(f"副本 {r} 的估计器 {label} 失败: {e}")
            except Exception as e:
                row['error'] = f"{type(e).__name__}: {e}"
                logger.error(f"副本 {r} 的估计器 {label} 出现意外错误: {e}", exc_info=True)
        rows.append(row)
    return rows


# ==================== 汇总 ====================

def summarize(config: ExperimentConfig, rows: List[Dict[str, Any]]) -> MCSummary:
    """
    按估计器汇总（总体公式）：均值、偏差、标准差（ddof=0）、RMSE、拒绝率
    """
    estimators: Dict[str, EstimatorSummary] = {}
    for label in estimator_labels(config.estimators):
        mine = [row for row in rows if row['estimator'] == label]
        ok = [row for row in mine if row['error'] is None and row['estimate'] is not None]
        values = np.array([row['estimate'] for row in ok], dtype=float)
        oracles = [row['oracle'] for row in ok if row['oracle'] is not None]
        oracle = oracles[0] if oracles else None

        mean = sd = bias = rmse = None
        if values.size:
            mean = float(np.mean(values))
            sd = float(np.std(values, ddof=0))
            if oracle is not None:
                bias = mean - oracle
                rmse = float(np.sqrt(np.mean((values - oracle) ** 2)))

        decisions = [row['rejected'] for row in ok if row['rejected'] is not None]
        rejection_rate = float(np.mean(decisions)) if decisions else None
        estimators[label] = EstimatorSummary(
            estimator=label,
            oracle=oracle,
            mean=mean,
            bias=bias,
            sd=sd,
            rmse=rmse,
            successes=len(ok),
            failures=len(mine) - len(ok),
            rejection_rate=rejection_rate,
        )
    return MCSummary(
        config_digest=config.digest(),
        replicates=int(config.replicates),
        estimators=estimators,
        rows=rows,
        failures=sum(1 for row in rows if row['error'] is not None),
    )


async def run_experiment(config: ExperimentConfig) -> MCSummary:
    """
    运行蒙特卡洛实验

    workers=1 时在当前进程顺序执行；否则交给大小为 workers 的进程池，按副本编号收集结果。

    Args:
        config: 实验配置

    Returns:
        MCSummary
    """
    data = config.to_dict()
    total = int(config.replicates)
    log_action("MC_START", {
        'scenario': config.scenario.scenario_id, 'replicates': total,
        'estimators': ",".join(e.name for e in config.estimators), 'workers': config.workers,
        'digest': config.digest(),
    })

    if config.workers == 1:
        results = []
        for r in range(total):
            results.append(run_replicate(data, r))
            logger.debug(f"蒙特卡洛进度 {create_progress_bar(r + 1, total)}")
    else:
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [loop.run_in_executor(pool, run_replicate, data, r) for r in range(total)]
            results = await asyncio.gather(*futures)

    rows = [row for replicate_rows in results for row in replicate_rows]
    summary = summarize(config, rows)
    log_action("MC_DONE", {'replicates': total, 'failures': summary.failures})
    logger.info(f"资源占用: {format_snapshot(resource_snapshot())}")
    return summary


# ==================== 报告 ====================

def summary_json(summary: MCSummary) -> str:
    """规范 JSON：键排序、固定缩进"""
    return json.dumps(summary.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def replicate_frame(summary: MCSummary) -> pd.DataFrame:
    """逐副本结果表（行数 = 副本数 × 估计器数）"""
    return pd.DataFrame(summary.rows, columns=REPLICATE_COLUMNS)


def long_frame(summary: MCSummary) -> pd.DataFrame:
    """长格式表：replicate, estimator, metric, value"""
    frame = replicate_frame(summary)
    long = frame.melt(
        id_vars=['replicate', 'estimator'], value_vars=LONG_METRICS,
        var_name='metric', value_name='value',
    )
    return long.sort_values(['replicate', 'estimator', 'metric'], kind='stable').reset_index(drop=True)


async def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(path, 'w', encoding='utf-8', newline='') as f:
            await f.write(text)
    except OSError as e:
        raise FileOperationException(f"无法写入报告: {e}", str(path))
    return path


async def emit_report(summary: MCSummary, path: Union[str, Path], fmt: str = "json") -> List[Path]:
    """
    写出实验报告

    json: 规范 JSON（含汇总与逐副本行）
    csv:  逐副本结果表写入 path，长格式表写入同目录的 <stem>.long.csv

    Returns:
        写出的文件列表
    """
    path = Path(path)
    if fmt == "json":
        written = [await _write_text(path, summary_json(summary))]
    elif fmt == "csv":
        wide = replicate_frame(summary).to_csv(index=False, lineterminator="\n")
        long = long_frame(summary).to_csv(index=False, lineterminator="\n")
        written = [
            await _write_text(path, wide),
            await _write_text(path.with_name(path.stem + ".long.csv"), long),
        ]
    else:
        raise ConfigurationException(f"未知输出格式 `{fmt}`（json | csv）", "format")
    for p in written:
        logger.info(f"报告已写出: {p}")
    return written


def load_summary(path: Union[str, Path]) -> MCSummary:
    """读取 JSON 报告"""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return MCSummary.from_dict(json.load(f))
    except FileNotFoundError:
        raise FileOperationException(f"报告文件不存在: {path}", str(path))
    except (json.JSONDecodeError, KeyError) as e:
        raise ConfigurationException(f"报告文件格式错误 ({path}): {e}")


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """读取并验证 TOML 实验配置"""
    data = read_toml(path)
    is_valid, error = validate_experiment_config(data)
    if not is_valid:
        raise ConfigurationException(f"实验配置无效: {error}")
    return ExperimentConfig.from_dict(data)
