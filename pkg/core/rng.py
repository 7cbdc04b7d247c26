"""
模块名称: rng.py
功能描述: 基于计数器的随机数派生（SplitMix64），保证并行与顺序生成结果一致

派生规则：
    derive_seed(base, k1, k2, ...) = mix(...mix(mix(base) ^ k1) ^ k2 ...)
    第 i 行第 s 个随机流的 64 位值 = mix(mix(row_key(seed, i)) ^ (s + 1))
    其中 row_key(seed, i) = mix(mix(seed) ^ i)
均匀数取高 53 位并偏移半个单位，落在开区间 (0, 1)。
"""

from typing import Sequence

import numpy as np
from scipy.special import ndtri

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 非行级随机流的标签，用于 derive_seed
STREAM_BOOTSTRAP = 0xB007
STREAM_EM_RESTART = 0xE111
STREAM_GOF = 0x6F0F
STREAM_REPLICATE = 0x5EED


def _mix_int(z: int) -> int:
    """SplitMix64 终结函数（Python 整数版）"""
    z = (z + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    """SplitMix64 终结函数（向量版，uint64 回绕运算）"""
    with np.errstate(over="ignore"):
        z = z + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def derive_seed(base: int, *keys: int) -> int:
    """
    由基础种子和若干整数键派生 64 位子种子

    Args:
        base: 基础种子
        keys: 派生键（副本编号、流标签等）

    Returns:
        64 位无符号整数种子
    """
    h = _mix_int(int(base) & MASK64)
    for key in keys:
        h = _mix_int(h ^ (int(key) & MASK64))
    return h


def make_generator(seed: int, *keys: int) -> np.random.Generator:
    """为非行级任务（EM 重启、自助法副本）创建独立生成器"""
    return np.random.default_rng(derive_seed(seed, *keys))


def row_uniforms(seed: int, rows: np.ndarray, n_streams: int) -> np.ndarray:
    """
    计算指定行的计数器随机均匀数

    Args:
        seed: 数据集种子
        rows: 行号数组
        n_streams: 每行随机流数

    Returns:
        形状 (len(rows), n_streams) 的 (0,1) 均匀数
    """
    rows = np.asarray(rows, dtype=np.uint64).reshape(-1)
    base = np.array([_mix_int(int(seed) & MASK64)], dtype=np.uint64)
    row_keys = _mix_array(base ^ rows)
    streams = np.arange(1, n_streams + 1, dtype=np.uint64)
    bits = _mix_array(_mix_array(row_keys)[:, None] ^ streams[None, :])
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def row_normals(uniforms: np.ndarray) -> np.ndarray:
    """将均匀数通过逆正态 CDF 映射为标准正态数"""
    return ndtri(uniforms)


def categorical_from_uniform(u: np.ndarray, probs: Sequence[float]) -> np.ndarray:
    """按累积概率把均匀数映射为类别索引，结果不会落在概率为 0 的类别"""
    probs = np.asarray(probs, dtype=float)
    cum = np.cumsum(probs)
    # 舍入误差不能让末尾留出缺口
    cum[-1] = 1.0
    idx = np.searchsorted(cum, u, side="right")
    last = int(np.flatnonzero(probs > 0)[-1])
    return np.minimum(idx, last).astype(np.int64)
