"""
模块名称: base.py
功能描述: 估计器公共设施：结构化操作日志、按序自助法、出处信息、TOML 读取
"""

import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.constants import BOOTSTRAP_REPLICATES
from core.exceptions import ConfigurationException, DeconfBaseException, FileOperationException
from core.linalg import ensure_identified, least_squares
from core.models import config_digest, pattern_label
from core.rng import STREAM_BOOTSTRAP, make_generator
from utils.logger import get_logger

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = get_logger(__name__)


def log_action(
    action: str,
    extra: Optional[Dict[str, Any]] = None,
    level: int = logging.INFO,
    log: Optional[logging.Logger] = None,
) -> None:
    """
    统一的估计步骤日志：操作类型 + 键值对，便于审计与排查。
    示例：ACTION=FIT_EM k=2 restarts=10 loglik=-103421.77
    """
    log = log or logger
    try:
        parts = [f"ACTION={action}"]
        if extra:
            for k, v in extra.items():
                if isinstance(v, float):
                    v = f"{v:.6g}"
                parts.append(f"{k}={v}")
        log.log(level, " ".join(parts))
    except Exception as e:
        # 日志失败不影响计算
        log.error(f"Failed to log action '{action}': {e}", exc_info=True)


def bootstrap(
    statistic: Callable[[np.ndarray], np.ndarray],
    n: int,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
) -> Tuple[np.ndarray, int]:
    """
    非参数行重抽样自助法

    第 b 个副本的索引由 derive_seed(seed, STREAM_BOOTSTRAP, b) 生成，
    与执行顺序无关；结果按副本编号排列。

    Args:
        statistic: 输入行索引、返回统计量向量的函数
        n: 行数
        replicates: 副本数 B
        seed: 基础种子

    Returns:
        (形状 (B, p) 的副本值, 失败副本数)；失败副本整行为 NaN
    """
    values = []
    failures = 0
    width = None
    for b in range(replicates):
        index = make_generator(seed, STREAM_BOOTSTRAP, b).integers(0, n, size=n)
        try:
            value = np.atleast_1d(np.asarray(statistic(index), dtype=float))
        except (DeconfBaseException, np.linalg.LinAlgError) as e:
            logger.debug(f"自助法副本 {b} 失败: {e}")
            failures += 1
            values.append(None)
            continue
        width = value.shape[0]
        values.append(value)
    if width is None:
        return np.full((replicates, 1), np.nan), failures
    rows = [np.full(width, np.nan) if v is None else v for v in values]
    return np.vstack(rows) if rows else np.empty((0, width)), failures


def bootstrap_se(values: np.ndarray) -> np.ndarray:
    """各列自助法标准误（ddof=1，忽略失败副本）"""
    values = np.atleast_2d(values)
    out = np.full(values.shape[1], np.nan)
    for j in range(values.shape[1]):
        col = values[:, j]
        col = col[np.isfinite(col)]
        if col.size >= 2:
            out[j] = float(np.std(col, ddof=1))
    return out


@dataclass
class RegressionFit:
    """最小二乘拟合 + 自助法标准误"""
    names: List[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    contrast: float = 0.0
    contrast_se: float = float("nan")
    replicates: int = 0
    failures: int = 0

    def coefficient_dict(self) -> Dict[str, float]:
        return {name: float(c) for name, c in zip(self.names, self.coefficients)}

    def se_dict(self) -> Dict[str, float]:
        return {name: float(s) for name, s in zip(self.names, self.std_errors)}


def regression_bootstrap(
    design: np.ndarray,
    response: np.ndarray,
    names: Sequence[str],
    contrast: Optional[np.ndarray] = None,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
    context: str = "回归",
) -> RegressionFit:
    """
    设计矩阵逐行固定的回归：先做共线性检查，再按行重抽样得到标准误

    Args:
        design: (n, p) 设计矩阵（每行只依赖该行的观测）
        response: 结果向量
        names: 列名
        contrast: 可选线性对比向量 w，报告 w·coef 及其标准误
        replicates: 自助法副本数
        seed: 自助法种子
        context: 错误信息中的上下文

    Returns:
        RegressionFit
    """
    ensure_identified(design, names, context)
    coef = least_squares(design, response)
    w = np.zeros(design.shape[1]) if contrast is None else np.asarray(contrast, dtype=float)
    point = float(coef @ w)

    if replicates <= 0:
        return RegressionFit(list(names), coef, np.full(coef.shape[0], np.nan), point)

    def statistic(index: np.ndarray) -> np.ndarray:
        rows = design[index]
        ensure_identified(rows, names, f"{context}（自助法副本）")
        c = least_squares(rows, response[index])
        return np.append(c, c @ w)

    values, failures = bootstrap(statistic, design.shape[0], replicates, seed)
    se = bootstrap_se(values)
    if se.shape[0] != coef.shape[0] + 1:
        se = np.full(coef.shape[0] + 1, np.nan)
    return RegressionFit(
        names=list(names),
        coefficients=coef,
        std_errors=se[:-1],
        contrast=point,
        contrast_se=float(se[-1]),
        replicates=replicates - failures,
        failures=failures,
    )


def provenance(seed: int, settings: Dict[str, Any], **extra: Any) -> Dict[str, Any]:
    """出处信息：种子 + 配置摘要"""
    info = {'seed': int(seed), 'config_digest': config_digest(_plain(settings))}
    info.update(extra)
    return info


def contrast_record(a: Sequence[int], a_prime: Sequence[int]) -> Dict[str, str]:
    return {'a': pattern_label(a), 'a_prime': pattern_label(a_prime)}


def read_toml(path: Union[str, Path]) -> Dict[str, Any]:
    """读取 TOML 配置文件"""
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise FileOperationException(f"配置文件不存在: {path}", str(path))
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationException(f"TOML 解析失败 ({path}): {e}")


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if callable(obj):
        return getattr(obj, '__name__', repr(obj))
    return obj
