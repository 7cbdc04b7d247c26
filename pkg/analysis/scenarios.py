"""
模块名称: scenarios.py
功能描述: 声明式数据生成情景、解析/枚举真值，以及数据集 CSV 读写

随机流约定（每行由 core.rng.row_uniforms 派生，与生成顺序无关）：
    Fig1 / Fig3 / IVBinary: s=0 潜类别, s=1..m 处理, s=m+1 结果噪声, s=m+2 工具变量
    Fig2a / Fig2b:          s=0..2 潜分量 Z1..Z3, s=3..m+2 处理, s=m+3 结果噪声
    CFTriangular:           s=0 潜变量 U, s=1 结果噪声, s=2 工具变量
"""

import re
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from core.exceptions import (
    ConfigurationException,
    DataValidationException,
    FileOperationException,
)
from core.models import (
    Dataset,
    FactorizedTreatmentModel,
    LatentClassModel,
    ScenarioSpec,
    TreatmentDistribution,
    enumerate_patterns,
)
from core.rng import categorical_from_uniform, row_normals, row_uniforms
from analysis.base import log_action, read_toml
from utils.logger import get_logger
from utils.validators import validate_scenario_config

logger = get_logger(__name__)

FIG2_IDS = ("Fig2a", "Fig2b")


# ==================== 生成 ====================

def generate(spec: ScenarioSpec, rows: Optional[np.ndarray] = None) -> Dataset:
    """
    按情景结构模型生成数据集

    Args:
        spec: 情景设定
        rows: 仅生成指定行（默认 0..n-1）；任意子集与整体生成中的对应行逐位相同

    Returns:
        Dataset（oracle_latent 已填充）
    """
    rows = np.arange(spec.n) if rows is None else np.asarray(rows, dtype=np.int64)
    sid = spec.scenario_id
    if sid == "CFTriangular":
        dataset = _generate_cf(spec, rows)
    elif sid in FIG2_IDS:
        dataset = _generate_fig2(spec, rows)
    else:
        dataset = _generate_latent_class(spec, rows)
    log_action("GENERATE", {'scenario': sid, 'n': dataset.n, 'seed': spec.seed})
    return dataset


def _outcome(spec: ScenarioSpec, treatments: np.ndarray, score: np.ndarray, u_noise: np.ndarray) -> np.ndarray:
    noise = spec.noise_sd * row_normals(u_noise)
    return spec.beta0 + treatments @ spec.beta + spec.sigma * score + noise


def _bernoulli(u: np.ndarray, p: np.ndarray) -> np.ndarray:
    return (u < p).astype(np.int64)


def _generate_latent_class(spec: ScenarioSpec, rows: np.ndarray) -> Dataset:
    m = spec.m
    u = row_uniforms(spec.seed, rows, m + 3)
    z = categorical_from_uniform(u[:, 0], spec.prior)
    instrument = None
    if spec.scenario_id == "IVBinary":
        instrument = np.minimum((u[:, m + 2] * spec.levels).astype(np.int64), spec.levels - 1)

    treatments = np.zeros((rows.shape[0], m), dtype=np.int64)
    for j in range(m):
        p = spec.cond[z, j]
        if spec.scenario_id == "Fig3" and j in (1, 2):
            p = expit(logit(p) + spec.edge_strength * treatments[:, 0])
        elif spec.scenario_id == "IVBinary":
            p = expit(logit(p) + spec.iv_effect[instrument, j])
        treatments[:, j] = _bernoulli(u[:, j + 1], p)

    outcome = _outcome(spec, treatments, z.astype(float), u[:, m + 1])
    return Dataset(
        treatments=treatments,
        outcome=outcome,
        instrument=instrument,
        oracle_latent=z,
        instrument_levels=spec.levels if instrument is not None else None,
    )


def _generate_fig2(spec: ScenarioSpec, rows: np.ndarray) -> Dataset:
    m = spec.m
    u = row_uniforms(spec.seed, rows, m + 4)
    components = np.column_stack(
        [_bernoulli(u[:, c], spec.component_prior[c]) for c in range(3)]
    )
    treatments = np.zeros((rows.shape[0], m), dtype=np.int64)
    for j in range(m):
        p = spec.cond[components[:, j], j]
        if spec.scenario_id == "Fig2b" and j in (0, 2):
            p = expit(logit(p) + spec.shared_strength * components[:, 1])
        treatments[:, j] = _bernoulli(u[:, 3 + j], p)
    composite = components @ np.array([1, 2, 4], dtype=np.int64)
    score = components.sum(axis=1).astype(float)
    outcome = _outcome(spec, treatments, score, u[:, m + 3])
    return Dataset(treatments=treatments, outcome=outcome, oracle_latent=composite)


def _generate_cf(spec: ScenarioSpec, rows: np.ndarray) -> Dataset:
    u = row_uniforms(spec.seed, rows, 3)
    latent = row_normals(u[:, 0])
    instrument = np.minimum((u[:, 2] * spec.levels).astype(np.int64), spec.levels - 1)
    treatment = spec.cf_gamma0 + spec.cf_gamma_w * instrument + spec.cf_gamma_u * latent
    noise = spec.noise_sd * row_normals(u[:, 1])
    outcome = spec.beta0 + spec.beta[0] * treatment + spec.sigma * latent + noise
    return Dataset(
        treatments=treatment.reshape(-1, 1),
        outcome=outcome,
        instrument=instrument,
        oracle_latent=latent,
        labels=["A1"],
        binary=False,
        instrument_levels=spec.levels,
    )


# ==================== 真值 ====================

def latent_scores(spec: ScenarioSpec) -> np.ndarray:
    """每个（复合）类别进入结果 σ 项的取值 g(z)"""
    if spec.scenario_id in FIG2_IDS:
        return np.array([bin(z).count("1") for z in range(8)], dtype=float)
    if spec.scenario_id == "CFTriangular":
        raise ConfigurationException("CFTriangular 的潜变量是连续的，没有类别得分", "scenario_id")
    return np.arange(spec.k, dtype=float)


def composite_prior(spec: ScenarioSpec) -> np.ndarray:
    """潜类别先验；Fig2 为三个分量的乘积分布（z = Z1 + 2·Z2 + 4·Z3）"""
    if spec.scenario_id not in FIG2_IDS:
        return spec.prior.copy()
    prior = np.empty(8)
    for z in range(8):
        bits = [(z >> c) & 1 for c in range(3)]
        prior[z] = np.prod([
            spec.component_prior[c] if bits[c] else 1.0 - spec.component_prior[c] for c in range(3)
        ])
    return prior


def expected_latent_score(spec: ScenarioSpec) -> float:
    """E[g(Z)]"""
    if spec.scenario_id == "CFTriangular":
        return 0.0
    return float(composite_prior(spec) @ latent_scores(spec))


def _check_pattern(spec: ScenarioSpec, pattern: Sequence[int], name: str) -> np.ndarray:
    arr = np.asarray(pattern, dtype=float).reshape(-1)
    if arr.shape[0] != spec.m:
        raise ConfigurationException(f"处理组合 `{name}` 长度为 {arr.shape[0]}，应为 m={spec.m}", name)
    return arr


def _linear_contrast(beta: np.ndarray, diff: np.ndarray) -> float:
    total = 0.0
    for b, d in zip(beta.tolist(), diff.tolist()):
        total += b * d
    return total


def true_ate(spec: ScenarioSpec, a: Sequence[int], a_prime: Sequence[int]) -> float:
    """τ(a, a′) = Σ_j β_j (a_j − a′_j)"""
    diff = _check_pattern(spec, a, "a") - _check_pattern(spec, a_prime, "a_prime")
    return _linear_contrast(spec.beta, diff)


def true_delta(spec: ScenarioSpec, p1: TreatmentDistribution, p0: TreatmentDistribution) -> float:
    """
    δ(p1, p0) = Σ_a E[Y(a)]·(p1(a) − p0(a))，E[Y(a)] = β0 + Σ β_j a_j + σ·E[g(Z)]

    对 2^m 个组合逐一枚举后按处理求和：
    Σ_j β_j (E_{p1}[a_j] − E_{p0}[a_j]) + (Σp1 − Σp0)(β0 + σE[g])，
    点质量时与 true_ate 逐位相等，p1 = p0 时恰为 0。
    """
    if not spec.binary:
        raise ConfigurationException("true_delta 只适用于二值处理情景", "scenario_id")
    if p1.m != spec.m or p0.m != spec.m:
        raise ConfigurationException(f"处理分布维度必须为 m={spec.m}", "p1")
    patterns = enumerate_patterns(spec.m).astype(float)
    t1 = p1.full_table()
    t0 = p0.full_table()
    diff = t1 @ patterns - t0 @ patterns
    mass = float(t1.sum()) - float(t0.sum())
    intercept = spec.beta0 + spec.sigma * expected_latent_score(spec)
    return _linear_contrast(spec.beta, diff) + mass * intercept


def true_q(spec: ScenarioSpec) -> np.ndarray:
    """结构平均响应 q(a) = β0 + Σ β_j a_j + σ·E[g(Z)]，按字典序排列"""
    if not spec.binary:
        raise ConfigurationException("true_q 只适用于二值处理情景", "scenario_id")
    patterns = enumerate_patterns(spec.m).astype(float)
    return spec.beta0 + patterns @ spec.beta + spec.sigma * expected_latent_score(spec)


def true_cf_slope(spec: ScenarioSpec) -> float:
    """CFTriangular 结构函数 s1 的斜率"""
    if spec.scenario_id != "CFTriangular":
        raise ConfigurationException("true_cf_slope 只适用于 CFTriangular", "scenario_id")
    return float(spec.beta[0])


def true_treatment_model(spec: ScenarioSpec) -> Union[LatentClassModel, FactorizedTreatmentModel]:
    """
    数据生成所用的处理模型

    Fig1/Fig2a/Fig2b 返回潜类别模型（Fig2 为 8 个复合类别），Fig3 返回分解模型。
    """
    sid = spec.scenario_id
    if sid == "Fig1":
        return LatentClassModel(prior=spec.prior, cond=spec.cond)
    if sid in FIG2_IDS:
        cond = np.empty((8, spec.m))
        for z in range(8):
            bits = [(z >> c) & 1 for c in range(3)]
            for j in range(spec.m):
                p = spec.cond[bits[j], j]
                if sid == "Fig2b" and j in (0, 2):
                    p = expit(logit(p) + spec.shared_strength * bits[1])
                cond[z, j] = p
        return LatentClassModel(prior=composite_prior(spec), cond=cond)
    if sid == "Fig3":
        shifted = [expit(logit(spec.cond[:, j]) + spec.edge_strength) for j in (1, 2)]
        return FactorizedTreatmentModel(
            prior=spec.prior,
            parents=((), (0,), (0,), ()),
            tables=(
                spec.cond[:, 0].reshape(1, -1),
                np.vstack([spec.cond[:, 1], shifted[0]]),
                np.vstack([spec.cond[:, 2], shifted[1]]),
                spec.cond[:, 3].reshape(1, -1),
            ),
        )
    raise ConfigurationException(f"情景 {sid} 的处理分布依赖工具变量，没有单一的 p(A|Z)", "scenario_id")


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    """读取 TOML 情景文件（顶层或 [scenario] 表）"""
    data = read_toml(path)
    data = data.get('scenario', data)
    ok, message = validate_scenario_config(data)
    if not ok:
        raise ConfigurationException(f"情景配置无效: {message}")
    return ScenarioSpec.from_dict(data)


# ==================== CSV ====================

_HEADER_RE = re.compile(r"^A(\d+)$")
_LINE_RE = re.compile(r"line (\d+)")


def _format_cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def save_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """
    保存数据集：表头 A1..Am,Y[,W][,Z]，实数按 repr 全精度写出

    Args:
        dataset: 数据集
        path: 输出路径

    Returns:
        写入的路径
    """
    path = Path(path)
    columns: Dict[str, list] = {}
    for j, label in enumerate(dataset.labels):
        columns[label] = [_format_cell(v) for v in dataset.treatments[:, j].tolist()]
    columns['Y'] = [repr(float(v)) for v in dataset.outcome.tolist()]
    if dataset.instrument is not None:
        columns['W'] = [str(int(v)) for v in dataset.instrument.tolist()]
    if dataset.oracle_latent is not None:
        integer = dataset.oracle_latent.dtype.kind in "iu"
        columns['Z'] = [str(int(v)) if integer else repr(float(v)) for v in dataset.oracle_latent.tolist()]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns).to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise FileOperationException(f"无法写入数据集: {e}", str(path))
    logger.info(f"数据集已保存: {path} ({dataset.n} 行)")
    return path


def _is_integer_literal(cell: str) -> bool:
    text = cell.strip()
    if text.startswith(('-', '+')):
        text = text[1:]
    return text.isdigit()


def _parse_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    values = np.empty(len(frame), dtype=float)
    for i, cell in enumerate(frame[name].tolist()):
        try:
            values[i] = float(cell)
        except (TypeError, ValueError):
            raise DataValidationException(f"列 {name} 的值 '{cell}' 不是数值", line=i + 2, column=name)
    return values


def load_csv(path: Union[str, Path], binary: Optional[bool] = None) -> Dataset:
    """
    读取数据集 CSV

    Args:
        path: 文件路径
        binary: 是否为二值处理；None 时处理列全部为整数字面量即视为二值

    Returns:
        Dataset
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except FileNotFoundError:
        raise FileOperationException(f"数据文件不存在: {path}", str(path))
    except pd.errors.EmptyDataError:
        raise DataValidationException("文件为空，缺少表头", line=1)
    except pd.errors.ParserError as e:
        match = _LINE_RE.search(str(e))
        line = int(match.group(1)) if match else None
        raise DataValidationException(f"行字段数与表头不一致: {e}", line=line)

    header = list(frame.columns)
    labels = []
    for name in header:
        match = _HEADER_RE.match(name)
        if not match:
            break
        if int(match.group(1)) != len(labels) + 1:
            raise DataValidationException(f"表头处理列必须依次为 A1..Am，遇到 '{name}'", line=1, column=name)
        labels.append(name)
    rest = header[len(labels):]
    if not labels or not rest or rest[0] != 'Y' or rest[1:] not in ([], ['W'], ['Z'], ['W', 'Z']):
        raise DataValidationException(f"表头格式错误: {','.join(header)}（应为 A1,...,Am,Y[,W][,Z]）", line=1)
    if len(frame) == 0:
        raise DataValidationException("数据集至少需要 1 行", line=2)

    # 短行缺失字段读为空串
    for i, row in enumerate(frame.itertuples(index=False)):
        for name, cell in zip(header, row):
            if cell is None or (isinstance(cell, float) and np.isnan(cell)) or str(cell).strip() == "":
                raise DataValidationException(f"列 {name} 缺失值（行字段数不足）", line=i + 2, column=name)

    treatment_cells = frame[labels].to_numpy().ravel().tolist()
    if binary is None:
        binary = all(_is_integer_literal(c) for c in treatment_cells)
    treatments = np.column_stack([_parse_column(frame, name) for name in labels])
    if binary:
        bad = np.argwhere((treatments != 0) & (treatments != 1))
        if bad.size:
            row, col = (int(v) for v in bad[0])
            raise DataValidationException(
                f"二值处理 {labels[col]} 取值 {frame[labels[col]].iloc[row]} 不在 {{0,1}} 中",
                line=row + 2,
                column=labels[col],
            )
        treatments = treatments.astype(np.int64)

    instrument = None
    if 'W' in rest:
        if not all(_is_integer_literal(c) for c in frame['W'].tolist()):
            raise DataValidationException("工具变量 W 必须为整数", column='W')
        instrument = _parse_column(frame, 'W').astype(np.int64)
    latent = None
    if 'Z' in rest:
        latent = _parse_column(frame, 'Z')
        if all(_is_integer_literal(c) for c in frame['Z'].tolist()):
            latent = latent.astype(np.int64)

    dataset = Dataset(
        treatments=treatments,
        outcome=_parse_column(frame, 'Y'),
        instrument=instrument,
        oracle_latent=latent,
        labels=labels,
        binary=bool(binary),
    )
    logger.info(f"数据集已读取: {path} ({dataset.n} 行, m={dataset.m})")
    return dataset
