"""
模块名称: validators.py
功能描述: 配置验证器，用于验证 TOML 情景/实验配置和命令行输入
"""

import re
from numbers import Real
from typing import Any, Dict, Optional, Tuple

from core.constants import ESTIMATOR_NAMES, SCENARIO_IDS, WEIGHT_MODES

# 情景表中允许出现的键
SCENARIO_KEYS = {
    'scenario_id', 'n', 'seed', 'prior', 'cond', 'beta', 'beta0', 'sigma', 'noise_sd',
    'edge_strength', 'shared_strength', 'component_prior', 'levels', 'iv_effect',
    'iv_strength', 'cf_gamma0', 'cf_gamma_w', 'cf_gamma_u',
}

EXPERIMENT_KEYS = {'scenario', 'estimators', 'replicates', 'base_seed', 'output', 'workers', 'bootstrap'}

SCALAR_KEYS = (
    'beta0', 'sigma', 'noise_sd', 'edge_strength', 'shared_strength',
    'iv_strength', 'cf_gamma0', 'cf_gamma_w', 'cf_gamma_u',
)


def _is_number(value: Any) -> bool:
    return isinstance(value, Real) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_vector(value: Any) -> bool:
    return isinstance(value, list) and len(value) > 0 and all(_is_number(v) for v in value)


def _is_matrix(value: Any) -> bool:
    if not isinstance(value, list) or not value:
        return False
    if not all(_is_vector(row) for row in value):
        return False
    return len({len(row) for row in value}) == 1


def validate_scenario_config(data: Dict[str, Any]) -> Tuple[bool, Optional[str]]:
    """
    验证情景配置的结构与类型（数值范围由 ScenarioSpec 负责）

    Args:
        data: [scenario] 表

    Returns:
        (是否有效, 错误消息)
    """
    if not isinstance(data, dict):
        return False, "情景配置必须是一个表"

    if 'scenario_id' not in data:
        return False, "情景配置缺少必需键: scenario_id"
    if data['scenario_id'] not in SCENARIO_IDS:
        return False, f"`scenario_id` 无效，必须是: {', '.join(SCENARIO_IDS)}"

    unknown = sorted(set(data) - SCENARIO_KEYS)
    if unknown:
        return False, f"情景配置含未知键: {', '.join(unknown)}"

    # 整数字段
    for key in ('n', 'seed', 'levels'):
        if key in data and not _is_int(data[key]):
            return False, f"`{key}` 必须是一个整数"
    if 'n' in data and data['n'] <= 0:
        return False, "`n` 必须是大于0的整数"
    if 'seed' in data and data['seed'] < 0:
        return False, "`seed` 不能是负数"

    # 数值字段
    for key in SCALAR_KEYS:
        if key in data and not _is_number(data[key]):
            return False, f"`{key}` 必须是数值"

    # 向量与矩阵
    for key in ('prior', 'beta', 'component_prior'):
        if key in data and not _is_vector(data[key]):
            return False, f"`{key}` 必须是非空数值列表"
    for key in ('cond', 'iv_effect'):
        if key in data and not _is_matrix(data[key]):
            return False, f"`{key}` 必须是行长度一致的数值矩阵"

    return True, None


def validate_estimator_entry(entry: Any, index: int) -> Tuple[bool, Optional[str]]:
    """
    验证单个估计器条目

    Args:
        entry: [[estimators]] 表
        index: 条目编号（从 1 开始）

    Returns:
        (是否有效, 错误消息)
    """
    if not isinstance(entry, dict):
        return False, f"估计器{index}不是一个表"
    if 'name' not in entry:
        return False, f"估计器{index}缺少必需键: name"
    if entry['name'] not in ESTIMATOR_NAMES:
        return False, f"估计器{index}的名称无效，必须是: {', '.join(ESTIMATOR_NAMES)}"
    settings = entry.get('settings', {})
    if not isinstance(settings, dict):
        return False, f"估计器{index}的 `settings` 必须是一个表"
    if 'k' in settings and (not _is_int(settings['k']) or settings['k'] < 1):
        return False, f"估计器{index}的 `k` 必须是正整数"
    if 'weights' in settings and settings['weights'] not in WEIGHT_MODES:
        return False, f"估计器{index}的 `weights` 必须是: {', '.join(WEIGHT_MODES)}"
    for key in ('a', 'a_prime'):
        if key not in settings:
            continue
        # 控制函数估计器的处理是连续值
        if entry['name'] == "cf":
            if not _is_number(settings[key]):
                return False, f"估计器{index}的 `{key}` 必须是数值"
        elif not validate_pattern_literal(str(settings[key])):
            return False, f"估计器{index}的 `{key}` 必须由 0/1 组成"
    return True, None


def validate_experiment_config(data: Dict[str, Any]) -> Tuple[bool, Optional[str]]:
    """
    验证蒙特卡洛实验配置

    Args:
        data: 完整 TOML 文档

    Returns:
        (是否有效, 错误消息)
    """
    if not isinstance(data, dict):
        return False, "实验配置必须是一个表"
    unknown = sorted(set(data) - EXPERIMENT_KEYS)
    if unknown:
        return False, f"实验配置含未知键: {', '.join(unknown)}"
    if 'scenario' not in data:
        return False, "实验配置缺少 [scenario] 表"

    is_valid, error = validate_scenario_config(data['scenario'])
    if not is_valid:
        return False, error

    estimators = data.get('estimators')
    if not isinstance(estimators, list) or len(estimators) == 0:
        return False, "实验必须至少包含一个 [[estimators]] 条目"
    for i, entry in enumerate(estimators, 1):
        is_valid, error = validate_estimator_entry(entry, i)
        if not is_valid:
            return False, error

    for key in ('replicates', 'workers'):
        if key in data:
            if not _is_int(data[key]):
                return False, f"`{key}` 必须是一个整数"
            if data[key] <= 0:
                return False, f"`{key}` 必须是大于0的整数"
    for key in ('base_seed', 'bootstrap'):
        if key in data and (not _is_int(data[key]) or data[key] < 0):
            return False, f"`{key}` 必须是非负整数"
    if 'output' in data and not isinstance(data['output'], str):
        return False, "`output` 必须是字符串路径"

    return True, None


def validate_pattern_literal(text: str) -> bool:
    """验证处理组合字面量（如 '101'）"""
    return bool(re.match(r'^[01]+$', text or ''))


def validate_contrast(text: str) -> Tuple[bool, Optional[str]]:
    """
    验证对比字面量 'a:a′'（如 '111:000'）

    Returns:
        (是否有效, 错误消息)
    """
    parts = (text or '').split(':')
    if len(parts) != 2:
        return False, "对比格式应为 <a>:<a′>，如 111:000"
    a, a_prime = parts
    if not validate_pattern_literal(a) or not validate_pattern_literal(a_prime):
        return False, "对比中的处理组合只能由 0/1 组成"
    if len(a) != len(a_prime):
        return False, "对比两侧的处理组合长度必须一致"
    return True, None


def sanitize_filename(filename: str) -> str:
    """
    清理文件名，移除不安全字符

    Args:
        filename: 原始文件名

    Returns:
        清理后的文件名
    """
    unsafe_chars = ['/', '\\', '..', '~', '<', '>', ':', '"', '|', '?', '*', ' ']
    safe_name = filename
    for char in unsafe_chars:
        safe_name = safe_name.replace(char, '_')
    return safe_name[:255] or 'unnamed'
