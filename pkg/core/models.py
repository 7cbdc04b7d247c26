"""
模块名称: models.py
功能描述: 数据模型定义，包含数据集、情景、处理分布、因子模型、报告等全部领域实体
"""

import hashlib
import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.constants import (
    BOOTSTRAP_REPLICATES,
    DEFAULT_CF_LEVELS,
    DEFAULT_EDGE_STRENGTH,
    DEFAULT_IV_LEVELS,
    DEFAULT_IV_STRENGTH,
    DEFAULT_NOISE_SD,
    DEFAULT_SHARED_STRENGTH,
    EM_MAX_ITER,
    EM_RESTARTS,
    EM_TOL,
    ENUMERATION_LIMIT,
    ESTIMATOR_NAMES,
    PROB_SUM_TOL,
    SCENARIO_IDS,
    WEIGHT_MODES,
)
from core.exceptions import (
    ConfigurationException,
    DataValidationException,
    EnumerationLimitException,
)


# ==================== 处理组合工具 ====================

def enumerate_patterns(m: int, limit: int = ENUMERATION_LIMIT) -> np.ndarray:
    """
    按字典序枚举全部 2^m 个二值处理组合（A1 为最高位）

    Args:
        m: 处理数
        limit: 枚举上限

    Returns:
        形状 (2^m, m) 的 int64 数组
    """
    if m > limit:
        raise EnumerationLimitException(m, limit)
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product((0, 1), repeat=m)), dtype=np.int64)


def pattern_index(patterns: np.ndarray) -> np.ndarray:
    """处理组合 → 字典序索引（与 enumerate_patterns 顺序一致）"""
    patterns = np.atleast_2d(np.asarray(patterns, dtype=np.int64))
    m = patterns.shape[1]
    weights = (1 << np.arange(m - 1, -1, -1)).astype(np.int64)
    return patterns @ weights


def pattern_label(pattern: Sequence[int]) -> str:
    """(1,0,1) → '101'"""
    return "".join(str(int(v)) for v in pattern)


def parse_pattern(text: str, m: Optional[int] = None) -> Tuple[int, ...]:
    """'101' → (1,0,1)"""
    text = text.strip()
    if not text or any(ch not in "01" for ch in text):
        raise ConfigurationException(f"处理组合 '{text}' 只能由 0/1 组成", "contrast")
    if m is not None and len(text) != m:
        raise ConfigurationException(f"处理组合 '{text}' 长度应为 {m}", "contrast")
    return tuple(int(ch) for ch in text)


def _float_array(value: Any, name: str, shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigurationException(f"`{name}` 必须是数值数组", name)
    if shape is not None and arr.shape != shape:
        raise ConfigurationException(f"`{name}` 形状应为 {shape}，实际为 {arr.shape}", name)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationException(f"`{name}` 含有非有限值", name)
    return arr


def _check_simplex(arr: np.ndarray, name: str) -> None:
    if np.any(arr < 0) or abs(float(arr.sum()) - 1.0) > PROB_SUM_TOL:
        raise ConfigurationException(f"`{name}` 必须位于概率单纯形上（非负且和为 1）", name)


def _check_open_unit(arr: np.ndarray, name: str) -> None:
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ConfigurationException(f"`{name}` 中的伯努利参数必须位于 (0,1)", name)


def canonical_json(data: Any) -> str:
    """规范 JSON：键排序、紧凑分隔符"""
    return json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def config_digest(data: Dict[str, Any]) -> str:
    """配置摘要（sha256 前 16 位）"""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]


# ==================== 数据集 ====================

@dataclass(eq=False)
class Dataset:
    """
    观测数据集

    treatments 为 n×m 矩阵（二值时为 int64，控制函数情景中为实数）；
    outcome 为长度 n 的结果向量；instrument / oracle_latent 可选。
    """
    treatments: np.ndarray
    outcome: np.ndarray
    instrument: Optional[np.ndarray] = None
    oracle_latent: Optional[np.ndarray] = None
    labels: Optional[List[str]] = None
    binary: bool = True
    instrument_levels: Optional[int] = None

    def __post_init__(self):
        treatments = np.asarray(self.treatments)
        if treatments.ndim == 1:
            treatments = treatments.reshape(-1, 1)
        if treatments.ndim != 2:
            raise DataValidationException("treatments 必须是二维矩阵", column="A")
        n = treatments.shape[0]
        if n < 1:
            raise DataValidationException("数据集至少需要 1 行")
        if self.binary:
            bad = np.argwhere((treatments != 0) & (treatments != 1))
            if bad.size:
                row, col = (int(v) for v in bad[0])
                raise DataValidationException(
                    f"二值处理取值 {treatments[row, col]} 不在 {{0,1}} 中",
                    line=row + 2,
                    column=f"A{col + 1}",
                )
            treatments = treatments.astype(np.int64)
        else:
            treatments = treatments.astype(np.float64)
        self.treatments = treatments

        self.outcome = np.asarray(self.outcome, dtype=np.float64).reshape(-1)
        if self.outcome.shape[0] != n:
            raise DataValidationException(f"outcome 长度 {self.outcome.shape[0]} 与 n={n} 不一致", column="Y")

        if self.instrument is not None:
            inst = np.asarray(self.instrument)
            if inst.reshape(-1).shape[0] != n:
                raise DataValidationException("instrument 长度与 n 不一致", column="W")
            if not np.all(np.equal(np.mod(inst, 1), 0)):
                raise DataValidationException("instrument 必须为整数", column="W")
            inst = inst.astype(np.int64).reshape(-1)
            if np.any(inst < 0):
                raise DataValidationException("instrument 取值必须非负", column="W")
            if self.instrument_levels is not None and np.any(inst >= self.instrument_levels):
                raise DataValidationException(
                    f"instrument 取值必须位于 [0, {self.instrument_levels})", column="W"
                )
            self.instrument = inst

        if self.oracle_latent is not None:
            latent = np.asarray(self.oracle_latent).reshape(-1)
            if latent.shape[0] != n:
                raise DataValidationException("oracle_latent 长度与 n 不一致", column="Z")
            self.oracle_latent = latent

        if self.labels is None:
            self.labels = [f"A{j + 1}" for j in range(treatments.shape[1])]
        elif len(self.labels) != treatments.shape[1]:
            raise DataValidationException("列标签数与处理数不一致")

    @property
    def n(self) -> int:
        return int(self.treatments.shape[0])

    @property
    def m(self) -> int:
        return int(self.treatments.shape[1])

    @property
    def levels(self) -> int:
        """工具变量水平数 L（声明值优先）"""
        if self.instrument is None:
            return 0
        if self.instrument_levels is not None:
            return int(self.instrument_levels)
        return int(self.instrument.max()) + 1

    def require_binary(self) -> None:
        if not self.binary:
            raise ConfigurationException("该操作要求二值处理", "treatments")

    def unique_patterns(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """返回 (唯一组合, 每行所属组合索引, 计数)"""
        self.require_binary()
        patterns, inverse, counts = np.unique(
            self.treatments, axis=0, return_inverse=True, return_counts=True
        )
        return patterns, inverse.reshape(-1), counts

    def take(self, index: np.ndarray) -> "Dataset":
        """按行索引取子集（自助法重抽样）"""
        return Dataset(
            treatments=self.treatments[index],
            outcome=self.outcome[index],
            instrument=None if self.instrument is None else self.instrument[index],
            oracle_latent=None if self.oracle_latent is None else self.oracle_latent[index],
            labels=list(self.labels),
            binary=self.binary,
            instrument_levels=self.instrument_levels,
        )

    def with_outcome(self, outcome: np.ndarray) -> "Dataset":
        return Dataset(
            treatments=self.treatments,
            outcome=outcome,
            instrument=self.instrument,
            oracle_latent=self.oracle_latent,
            labels=list(self.labels),
            binary=self.binary,
            instrument_levels=self.instrument_levels,
        )

    def equals(self, other: "Dataset") -> bool:
        """逐位比较（含 dtype 类别）"""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype.kind == b.dtype.kind and a.shape == b.shape and np.array_equal(a, b)

        return (
            self.labels == other.labels
            and self.binary == other.binary
            and same(self.treatments, other.treatments)
            and same(self.outcome, other.outcome)
            and same(self.instrument, other.instrument)
            and same(self.oracle_latent, other.oracle_latent)
        )


# ==================== 情景 ====================

@dataclass(eq=False)
class ScenarioSpec:
    """
    声明式数据生成情景

    Fig1/Fig3/IVBinary: prior (k) 与 cond (k×m) 描述 p(Z) 与 p(A_j=1|Z)。
    Fig2a/Fig2b: component_prior (3) 为 P(Z_j=1)，cond (2×3) 为 p(A_j=1|Z_j)。
    CFTriangular: 单一连续处理，A = γ0 + γW·W + γU·U，Y = β0 + β1·A + σ·U + ε。
    """
    scenario_id: str
    n: int
    seed: int
    prior: np.ndarray
    cond: np.ndarray
    beta: np.ndarray
    beta0: float = 0.0
    sigma: float = 1.0
    noise_sd: float = DEFAULT_NOISE_SD
    edge_strength: float = DEFAULT_EDGE_STRENGTH
    shared_strength: float = DEFAULT_SHARED_STRENGTH
    component_prior: Optional[np.ndarray] = None
    levels: int = 1
    iv_effect: Optional[np.ndarray] = None
    iv_strength: float = DEFAULT_IV_STRENGTH
    cf_gamma0: float = 0.0
    cf_gamma_w: float = 3.0
    cf_gamma_u: float = 0.5

    def __post_init__(self):
        if self.scenario_id not in SCENARIO_IDS:
            raise ConfigurationException(
                f"未知情景 `{self.scenario_id}`，可选: {', '.join(SCENARIO_IDS)}", "scenario_id"
            )
        if int(self.n) < 1:
            raise ConfigurationException("`n` 必须是正整数", "n")
        self.n = int(self.n)
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationException("`seed` 必须是 64 位无符号整数", "seed")
        self.seed = int(self.seed)
        if not self.noise_sd > 0:
            raise ConfigurationException("`noise_sd` 必须大于 0", "noise_sd")

        self.beta = _float_array(self.beta, "beta").reshape(-1)
        self.prior = _float_array(self.prior, "prior").reshape(-1)
        self.cond = np.atleast_2d(_float_array(self.cond, "cond"))

        if self.scenario_id == "CFTriangular":
            if self.beta.shape != (1,):
                raise ConfigurationException("CFTriangular 只有一个连续处理，`beta` 长度应为 1", "beta")
            if int(self.levels) < 1:
                raise ConfigurationException("`levels` 必须至少为 1", "levels")
            self.levels = int(self.levels)
            return

        _check_simplex(self.prior, "prior")
        _check_open_unit(self.cond, "cond")
        m = self.cond.shape[1]
        if self.beta.shape != (m,):
            raise ConfigurationException(f"`beta` 长度应为 m={m}", "beta")

        if self.scenario_id in ("Fig2a", "Fig2b"):
            if m != 3 or self.cond.shape[0] != 2:
                raise ConfigurationException("Fig2 情景的 `cond` 形状必须为 2×3", "cond")
            comp = np.full(3, 0.5) if self.component_prior is None else self.component_prior
            self.component_prior = _float_array(comp, "component_prior", (3,))
            _check_open_unit(self.component_prior, "component_prior")
        elif self.cond.shape[0] != self.prior.shape[0]:
            raise ConfigurationException("`cond` 行数必须等于类别数 k", "cond")

        if self.scenario_id == "Fig3" and m != 4:
            raise ConfigurationException("Fig3 情景要求 m=4", "cond")

        if self.scenario_id == "IVBinary":
            self.levels = int(self.levels)
            if self.levels < 1:
                raise ConfigurationException("`levels` 必须至少为 1", "levels")
            if self.iv_effect is None:
                self.iv_effect = default_iv_effect(self.levels, m, self.iv_strength)
            self.iv_effect = _float_array(self.iv_effect, "iv_effect", (self.levels, m))

    @property
    def m(self) -> int:
        return int(self.beta.shape[0])

    @property
    def k(self) -> int:
        if self.scenario_id in ("Fig2a", "Fig2b"):
            return 8
        return int(self.prior.shape[0])

    @property
    def binary(self) -> bool:
        return self.scenario_id != "CFTriangular"

    @classmethod
    def default(cls, scenario_id: str, **overrides) -> "ScenarioSpec":
        """各情景的默认参数，overrides 覆盖任意字段"""
        base: Dict[str, Any] = {
            "scenario_id": scenario_id,
            "n": 1000,
            "seed": 42,
            "prior": [0.5, 0.5],
            "cond": [[0.2, 0.2, 0.2], [0.8, 0.8, 0.8]],
            "beta": [1.0, 2.0, 3.0],
        }
        if scenario_id in ("Fig2a", "Fig2b"):
            base["cond"] = [[0.2, 0.2, 0.2], [0.8, 0.8, 0.8]]
            base["component_prior"] = [0.5, 0.5, 0.5]
        elif scenario_id == "Fig3":
            base["cond"] = [[0.2, 0.2, 0.2, 0.2], [0.8, 0.8, 0.8, 0.8]]
            base["beta"] = [1.0, 2.0, 3.0, -1.0]
        elif scenario_id == "IVBinary":
            base["cond"] = [[0.3, 0.3], [0.7, 0.7]]
            base["beta"] = [1.0, 2.0]
            base["levels"] = DEFAULT_IV_LEVELS
        elif scenario_id == "CFTriangular":
            base["prior"] = [1.0]
            base["cond"] = [[0.5]]
            base["beta"] = [1.5]
            base["levels"] = DEFAULT_CF_LEVELS
        base.update(overrides)
        return cls(**base)

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return {
            'scenario_id': self.scenario_id,
            'n': self.n,
            'seed': self.seed,
            'prior': self.prior.tolist(),
            'cond': self.cond.tolist(),
            'beta': self.beta.tolist(),
            'beta0': float(self.beta0),
            'sigma': float(self.sigma),
            'noise_sd': float(self.noise_sd),
            'edge_strength': float(self.edge_strength),
            'shared_strength': float(self.shared_strength),
            'component_prior': None if self.component_prior is None else self.component_prior.tolist(),
            'levels': int(self.levels),
            'iv_effect': None if self.iv_effect is None else self.iv_effect.tolist(),
            'iv_strength': float(self.iv_strength),
            'cf_gamma0': float(self.cf_gamma0),
            'cf_gamma_w': float(self.cf_gamma_w),
            'cf_gamma_u': float(self.cf_gamma_u),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioSpec":
        """从字典创建实例（缺省字段取该情景默认值）"""
        if 'scenario_id' not in data:
            raise ConfigurationException("情景配置缺少 `scenario_id`", "scenario_id")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationException(f"情景配置含未知字段: {', '.join(unknown)}", unknown[0])
        fields_ = {key: value for key, value in data.items() if value is not None}
        scenario_id = fields_.pop('scenario_id')
        return cls.default(scenario_id, **fields_)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def default_iv_effect(levels: int, m: int, strength: float) -> np.ndarray:
    """第 l 个工具水平对 A_j 的对数几率偏移：按 (l mod 2^m) 的第 j 位取 ±strength"""
    effect = np.empty((levels, m))
    for level in range(levels):
        code = level % (1 << m)
        for j in range(m):
            bit = (code >> (m - 1 - j)) & 1
            effect[level, j] = strength if bit else -strength
    return effect


# ==================== 处理分布 ====================

@dataclass(eq=False)
class TreatmentDistribution:
    """处理组合上的概率分布：显式概率表（2^m）或独立伯努利乘积（m 个边际）"""
    m: int
    kind: str = "product"
    marginals: Optional[np.ndarray] = None
    table: Optional[np.ndarray] = None
    source: Optional[str] = None

    def __post_init__(self):
        if self.kind == "product":
            self.marginals = _float_array(self.marginals, "marginals", (self.m,))
            if np.any(self.marginals < 0) or np.any(self.marginals > 1):
                raise ConfigurationException("乘积分布的边际概率必须位于 [0,1]", "marginals")
        elif self.kind == "table":
            if self.m > ENUMERATION_LIMIT:
                raise EnumerationLimitException(self.m, ENUMERATION_LIMIT)
            self.table = _float_array(self.table, "table", (1 << self.m,))
            if np.any(self.table < 0) or abs(float(self.table.sum()) - 1.0) > PROB_SUM_TOL:
                raise ConfigurationException("概率表必须非负且和为 1（容差 1e-12）", "table")
        else:
            raise ConfigurationException(f"未知分布类型 `{self.kind}`", "kind")

    @classmethod
    def product(cls, marginals: Sequence[float]) -> "TreatmentDistribution":
        marginals = list(marginals)
        return cls(m=len(marginals), kind="product", marginals=marginals,
                   source="prod:" + ",".join(repr(float(p)) for p in marginals))

    @classmethod
    def from_table(cls, probs: Sequence[float], m: int, source: Optional[str] = None) -> "TreatmentDistribution":
        return cls(m=m, kind="table", table=probs, source=source)

    @classmethod
    def point_mass(cls, pattern: Sequence[int]) -> "TreatmentDistribution":
        m = len(pattern)
        probs = np.zeros(1 << m)
        probs[int(pattern_index(np.array([pattern]))[0])] = 1.0
        return cls(m=m, kind="table", table=probs, source="point:" + pattern_label(pattern))

    def prob(self, patterns: np.ndarray) -> np.ndarray:
        """逐行计算 p(a)"""
        patterns = np.atleast_2d(np.asarray(patterns, dtype=np.int64))
        if patterns.shape[1] != self.m:
            raise ConfigurationException(f"处理组合长度应为 {self.m}", "pattern")
        if self.kind == "table":
            return self.table[pattern_index(patterns)]
        p = self.marginals[None, :]
        return np.prod(np.where(patterns == 1, p, 1.0 - p), axis=1)

    def full_table(self) -> np.ndarray:
        """在全部 2^m 组合上的概率（枚举受保护）"""
        if self.kind == "table":
            return self.table.copy()
        return self.prob(enumerate_patterns(self.m))

    def describe(self) -> str:
        return self.source or self.kind

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return {
            'm': self.m,
            'kind': self.kind,
            'marginals': None if self.marginals is None else self.marginals.tolist(),
            'table': None if self.table is None else self.table.tolist(),
            'source': self.source,
        }


# ==================== 因子模型 ====================

@dataclass(frozen=True)
class FitConfig:
    """EM 拟合配置"""
    max_iter: int = EM_MAX_ITER
    tol: float = EM_TOL
    restarts: int = EM_RESTARTS
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigurationException("`max_iter` 必须为正", "max_iter")
        if not self.tol > 0:
            raise ConfigurationException("`tol` 必须为正", "tol")
        if self.restarts < 1:
            raise ConfigurationException("`restarts` 必须为正", "restarts")
        if self.seed < 0:
            raise ConfigurationException("`seed` 必须非负", "seed")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FitConfig":
        return cls(
            max_iter=int(data.get('max_iter', EM_MAX_ITER)),
            tol=float(data.get('tol', EM_TOL)),
            restarts=int(data.get('restarts', EM_RESTARTS)),
            seed=int(data.get('seed', 0)),
        )


@dataclass(frozen=True)
class FitMetadata:
    """拟合元数据"""
    loglik: float = float("nan")
    iterations: int = 0
    restarts: int = 0
    best_restart: int = 0
    converged: bool = True
    flags: Tuple[str, ...] = ()
    trace: Tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class LatentClassModel:
    """
    潜类别因子模型

    prior[z] = P(Z=z)；cond[z, j] = P(A_j=1 | Z=z)。
    """
    prior: np.ndarray
    cond: np.ndarray
    metadata: FitMetadata = field(default_factory=FitMetadata)

    def __post_init__(self):
        prior = np.array(self.prior, dtype=float).reshape(-1)
        cond = np.atleast_2d(np.array(self.cond, dtype=float))
        if cond.shape[0] != prior.shape[0]:
            raise ConfigurationException("`cond` 行数必须等于类别数 k", "cond")
        _check_simplex(prior, "prior")
        if np.any(cond < 0) or np.any(cond > 1):
            raise ConfigurationException("`cond` 取值必须位于 [0,1]", "cond")
        prior.setflags(write=False)
        cond.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "cond", cond)

    @property
    def k(self) -> int:
        return int(self.prior.shape[0])

    @property
    def m(self) -> int:
        return int(self.cond.shape[1])

    def to_dict(self) -> Dict[str, Any]:
        """模型 JSON：{k, prior[], cond[][], loglik, iters}"""
        loglik = self.metadata.loglik
        return {
            'k': self.k,
            'prior': self.prior.tolist(),
            'cond': self.cond.tolist(),
            'loglik': None if np.isnan(loglik) else float(loglik),
            'iters': int(self.metadata.iterations),
            'restarts': int(self.metadata.restarts),
            'flags': list(self.metadata.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LatentClassModel":
        """从字典创建实例"""
        for key in ('k', 'prior', 'cond'):
            if key not in data:
                raise ConfigurationException(f"模型 JSON 缺少 `{key}`", key)
        model = cls(
            prior=data['prior'],
            cond=data['cond'],
            metadata=FitMetadata(
                loglik=float("nan") if data.get('loglik') is None else float(data['loglik']),
                iterations=int(data.get('iters', 0)),
                restarts=int(data.get('restarts', 0)),
                flags=tuple(data.get('flags', ())),
            ),
        )
        if model.k != int(data['k']):
            raise ConfigurationException("模型 JSON 中 `k` 与 `prior` 长度不一致", "k")
        return model


@dataclass(frozen=True, eq=False)
class FactorizedTreatmentModel:
    """
    带处理间因果边的分解处理模型

    p(A, Z) = p(Z) ∏_j p(A_j | pa(A_j), Z)；
    tables[j] 形状为 (2^{|pa_j|}, k)，行为父节点取值的字典序索引。
    """
    prior: np.ndarray
    parents: Tuple[Tuple[int, ...], ...]
    tables: Tuple[np.ndarray, ...]
    metadata: FitMetadata = field(default_factory=FitMetadata)

    def __post_init__(self):
        prior = np.array(self.prior, dtype=float).reshape(-1)
        _check_simplex(prior, "prior")
        parents = tuple(tuple(int(p) for p in pa) for pa in self.parents)
        if len(parents) != len(self.tables):
            raise ConfigurationException("`parents` 与 `tables` 数量不一致", "tables")
        tables = []
        for j, (pa, table) in enumerate(zip(parents, self.tables)):
            if any(p >= j for p in pa):
                raise ConfigurationException(f"A{j + 1} 的父节点必须排在其前面", "parents")
            arr = np.array(table, dtype=float).reshape(1 << len(pa), prior.shape[0])
            if np.any(arr < 0) or np.any(arr > 1):
                raise ConfigurationException(f"A{j + 1} 的条件概率表必须位于 [0,1]", "tables")
            arr.setflags(write=False)
            tables.append(arr)
        prior.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "tables", tuple(tables))

    @property
    def k(self) -> int:
        return int(self.prior.shape[0])

    @property
    def m(self) -> int:
        return len(self.parents)

    def table_for(self, j: int, parent_values: Sequence[int]) -> np.ndarray:
        """返回 P(A_j=1 | pa=parent_values, Z=·)，长度 k"""
        idx = 0
        for value in parent_values:
            idx = (idx << 1) | int(value)
        return self.tables[j][idx]

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        loglik = self.metadata.loglik
        return {
            'k': self.k,
            'prior': self.prior.tolist(),
            'parents': [list(pa) for pa in self.parents],
            'tables': [t.tolist() for t in self.tables],
            'loglik': None if np.isnan(loglik) else float(loglik),
            'iters': int(self.metadata.iterations),
            'flags': list(self.metadata.flags),
        }

    @classmethod
    def from_latent_class(cls, model: LatentClassModel) -> "FactorizedTreatmentModel":
        """潜类别模型即全部父节点为空的分解模型"""
        return cls(
            prior=model.prior,
            parents=tuple(() for _ in range(model.m)),
            tables=tuple(model.cond[:, j].reshape(1, -1) for j in range(model.m)),
            metadata=model.metadata,
        )


# ==================== 参数化识别 ====================

def _identity(x):
    return x


@dataclass(frozen=True)
class BasisSpec:
    """
    加性结果模型的基函数设定

    basis: 每个处理的 b_j（None 表示恒等）；g: 潜变量摘要（默认类别索引）；
    sigma_known: 已知 σ 时给出其值，此时设计中省略 E{g(Z)|A} 列。
    """
    basis: Optional[Tuple[Callable[[np.ndarray], np.ndarray], ...]] = None
    g: Callable[[np.ndarray], np.ndarray] = _identity
    sigma_known: Optional[float] = None

    def basis_for(self, j: int) -> Callable[[np.ndarray], np.ndarray]:
        if self.basis is None:
            return _identity
        return self.basis[j]


# ==================== 工具变量 ====================

@dataclass(eq=False)
class IVSystem:
    """E(Y|W=l) = Σ_a q(a)·P[a,l] 的经验线性系统"""
    response: np.ndarray      # (L,)
    transition: np.ndarray    # (2^m, L)
    counts: np.ndarray        # (L,)
    m: int

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float).reshape(-1)
        self.transition = np.atleast_2d(np.asarray(self.transition, dtype=float))
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        levels = self.response.shape[0]
        if levels < 1:
            raise ConfigurationException("工具变量至少需要 1 个水平", "levels")
        if self.transition.shape != (1 << self.m, levels):
            raise ConfigurationException("转移矩阵形状必须为 2^m × L", "transition")
        if np.any(np.abs(self.transition.sum(axis=0) - 1.0) > PROB_SUM_TOL):
            raise ConfigurationException("转移矩阵每列之和必须为 1", "transition")

    @property
    def levels(self) -> int:
        return int(self.response.shape[0])


@dataclass(eq=False)
class ControlFunctionFit:
    """控制函数两阶段拟合结果"""
    control: np.ndarray                     # 每行 C_i ∈ (0,1)
    coefficients: np.ndarray                # 第二阶段系数
    terms: Tuple[Tuple[int, int], ...]      # 每项 (A 的幂, C 的幂)
    stratum_sizes: Dict[int, int]
    degree: int
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.control < 0) or np.any(self.control > 1):
            raise ConfigurationException("控制函数取值必须位于 [0,1]", "control")

    def term_names(self) -> List[str]:
        names = []
        for pa, pc in self.terms:
            parts = []
            if pa:
                parts.append("A" if pa == 1 else f"A^{pa}")
            if pc:
                parts.append("C" if pc == 1 else f"C^{pc}")
            names.append("*".join(parts) or "const")
        return names


# ==================== 随机干预 ====================

@dataclass(eq=False)
class SIConfig:
    """随机干预估计配置"""
    p1: TreatmentDistribution
    p0: TreatmentDistribution
    weight_mode: str = "posterior"
    normalize: bool = True
    truncation: Optional[float] = None

    def __post_init__(self):
        if self.p1.m != self.p0.m:
            raise ConfigurationException("p1 与 p0 的处理数必须一致", "p0")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigurationException(
                f"权重模式必须是 {' | '.join(WEIGHT_MODES)}", "weight_mode"
            )
        if self.truncation is not None and not self.truncation > 0:
            raise ConfigurationException("截断阈值必须为正", "truncation")


# ==================== 报告 ====================

@dataclass
class EstimateReport:
    """点估计 + 自助法标准误 + 诊断 + 出处"""
    estimand: str
    method: str
    estimate: float
    std_error: float = 0.0
    replicates: int = 0
    contrast: Optional[Dict[str, Any]] = None
    coefficients: Dict[str, float] = field(default_factory=dict)
    coefficient_se: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not (self.std_error >= 0 or np.isnan(self.std_error)):
            raise ConfigurationException("标准误必须非负", "std_error")
        if self.replicates < 0:
            raise ConfigurationException("自助法副本数必须非负", "replicates")

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return {
            'estimand': self.estimand,
            'method': self.method,
            'estimate': _json_float(self.estimate),
            'std_error': _json_float(self.std_error),
            'replicates': int(self.replicates),
            'contrast': self.contrast,
            'coefficients': {k: _json_float(v) for k, v in self.coefficients.items()},
            'coefficient_se': {k: _json_float(v) for k, v in self.coefficient_se.items()},
            'diagnostics': _jsonable(self.diagnostics),
            'provenance': _jsonable(self.provenance),
            'notes': list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EstimateReport":
        """从字典创建实例"""
        return cls(
            estimand=data['estimand'],
            method=data['method'],
            estimate=_from_json_float(data['estimate']),
            std_error=_from_json_float(data.get('std_error', 0.0)),
            replicates=int(data.get('replicates', 0)),
            contrast=data.get('contrast'),
            coefficients={k: _from_json_float(v) for k, v in data.get('coefficients', {}).items()},
            coefficient_se={k: _from_json_float(v) for k, v in data.get('coefficient_se', {}).items()},
            diagnostics=data.get('diagnostics', {}),
            provenance=data.get('provenance', {}),
            notes=list(data.get('notes', [])),
        )


@dataclass
class DiagnosticReport:
    """条件独立诊断与拟合优度检验报告"""
    pairwise_p_values: Dict[str, float]
    gof_statistic: float
    gof_p_value: float
    bootstrap_count: int
    cell_counts: Dict[str, int]
    alpha: float = 0.05
    degrees_of_freedom: int = 0
    low_expected_warning: bool = False
    pair_tests: List[Dict[str, Any]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        values = list(self.pairwise_p_values.values()) + [self.gof_p_value]
        if any(not (0.0 <= v <= 1.0) for v in values):
            raise ConfigurationException("p 值必须位于 [0,1]", "p_value")

    @property
    def rejected(self) -> bool:
        """拟合优度检验在 alpha 水平下拒绝"""
        return self.gof_p_value < self.alpha

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return {
            'pairwise_p_values': dict(self.pairwise_p_values),
            'gof_statistic': _json_float(self.gof_statistic),
            'gof_p_value': _json_float(self.gof_p_value),
            'bootstrap_count': int(self.bootstrap_count),
            'degrees_of_freedom': int(self.degrees_of_freedom),
            'cell_counts': dict(self.cell_counts),
            'alpha': float(self.alpha),
            'rejected': self.rejected,
            'low_expected_warning': bool(self.low_expected_warning),
            'pair_tests': _jsonable(self.pair_tests),
            'notes': list(self.notes),
        }


# ==================== 蒙特卡洛 ====================

@dataclass(frozen=True)
class EstimatorSpec:
    """实验中的一个估计器及其设置"""
    name: str
    settings: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in ESTIMATOR_NAMES:
            raise ConfigurationException(
                f"未知估计器 `{self.name}`，可选: {', '.join(ESTIMATOR_NAMES)}", "estimators"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'settings': _jsonable(self.settings)}


@dataclass(eq=False)
class ExperimentConfig:
    """蒙特卡洛实验配置"""
    scenario: ScenarioSpec
    estimators: List[EstimatorSpec]
    replicates: int = 1
    base_seed: int = 0
    output: Optional[str] = None
    workers: int = 1
    bootstrap: int = BOOTSTRAP_REPLICATES

    def __post_init__(self):
        if int(self.replicates) < 1:
            raise ConfigurationException("`replicates` 必须至少为 1", "replicates")
        if not self.estimators:
            raise ConfigurationException("估计器列表不能为空", "estimators")
        if int(self.workers) < 1:
            raise ConfigurationException("`workers` 必须至少为 1", "workers")
        if int(self.bootstrap) < 0:
            raise ConfigurationException("`bootstrap` 不能为负", "bootstrap")

    def to_dict(self) -> Dict[str, Any]:
        """并行度与输出路径不影响结果，不进入摘要"""
        return {
            'scenario': self.scenario.to_dict(),
            'estimators': [e.to_dict() for e in self.estimators],
            'replicates': int(self.replicates),
            'base_seed': int(self.base_seed),
            'bootstrap': int(self.bootstrap),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """从字典创建实例"""
        if 'scenario' not in data:
            raise ConfigurationException("实验配置缺少 [scenario] 表", "scenario")
        estimators = [
            EstimatorSpec(name=e['name'], settings=dict(e.get('settings', {})))
            for e in data.get('estimators', [])
        ]
        return cls(
            scenario=ScenarioSpec.from_dict(dict(data['scenario'])),
            estimators=estimators,
            replicates=int(data.get('replicates', 1)),
            base_seed=int(data.get('base_seed', 0)),
            output=data.get('output'),
            workers=int(data.get('workers', 1)),
            bootstrap=int(data.get('bootstrap', BOOTSTRAP_REPLICATES)),
        )

    def digest(self) -> str:
        return config_digest(self.to_dict())


@dataclass
class EstimatorSummary:
    """单个估计器的蒙特卡洛汇总（总体公式：RMSE² = bias² + SD²）"""
    estimator: str
    oracle: Optional[float]
    mean: Optional[float]
    bias: Optional[float]
    sd: Optional[float]
    rmse: Optional[float]
    successes: int
    failures: int
    rejection_rate: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'estimator': self.estimator,
            'oracle': _json_float(self.oracle),
            'mean': _json_float(self.mean),
            'bias': _json_float(self.bias),
            'sd': _json_float(self.sd),
            'rmse': _json_float(self.rmse),
            'successes': int(self.successes),
            'failures': int(self.failures),
            'rejection_rate': _json_float(self.rejection_rate),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EstimatorSummary":
        return cls(
            estimator=data['estimator'],
            oracle=data.get('oracle'),
            mean=data.get('mean'),
            bias=data.get('bias'),
            sd=data.get('sd'),
            rmse=data.get('rmse'),
            successes=int(data['successes']),
            failures=int(data['failures']),
            rejection_rate=data.get('rejection_rate'),
        )


@dataclass
class MCSummary:
    """蒙特卡洛实验汇总：每个估计器的统计量 + 逐副本原始表"""
    config_digest: str
    replicates: int
    estimators: Dict[str, EstimatorSummary]
    rows: List[Dict[str, Any]]
    failures: int = 0

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式"""
        return {
            'config_digest': self.config_digest,
            'replicates': int(self.replicates),
            'failures': int(self.failures),
            'estimators': {name: s.to_dict() for name, s in self.estimators.items()},
            'rows': [_jsonable(row) for row in self.rows],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MCSummary":
        return cls(
            config_digest=data['config_digest'],
            replicates=int(data['replicates']),
            failures=int(data.get('failures', 0)),
            estimators={name: EstimatorSummary.from_dict(s) for name, s in data['estimators'].items()},
            rows=list(data['rows']),
        )


# ==================== JSON 辅助 ====================

def _json_float(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return None if not np.isfinite(value) else value


def _from_json_float(value: Optional[float]) -> float:
    return float("nan") if value is None else float(value)


def _jsonable(obj: Any) -> Any:
    """递归转换 numpy 类型，非有限浮点数转为 None"""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _json_float(obj)
    return obj
