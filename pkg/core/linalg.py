"""
模块名称: linalg.py
功能描述: 最小二乘、标准化设计矩阵共线性检测、奇异值秩报告
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.constants import COLLINEARITY_TOL, RANK_TOL
from core.exceptions import IdentificationException


@dataclass
class RankReport:
    """奇异值秩报告"""
    singular_values: List[float]
    rank: int
    columns: int
    full_rank: bool
    tolerance: float
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'singular_values': [float(s) for s in self.singular_values],
            'rank': int(self.rank),
            'columns': int(self.columns),
            'full_rank': bool(self.full_rank),
            'tolerance': float(self.tolerance),
            'notes': list(self.notes),
        }


def rank_report(matrix: np.ndarray, tol: float = RANK_TOL) -> RankReport:
    """
    按相对奇异值判定列秩

    Args:
        matrix: 设计矩阵
        tol: 相对容差（s > tol × s_max 计入秩）

    Returns:
        RankReport
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    cols = matrix.shape[1]
    if matrix.size == 0:
        return RankReport([], 0, cols, cols == 0, tol)
    s = np.linalg.svd(matrix, compute_uv=False)
    s_max = float(s[0]) if s.size else 0.0
    rank = int(np.sum(s > tol * s_max)) if s_max > 0 else 0
    return RankReport(
        singular_values=s.tolist(),
        rank=rank,
        columns=cols,
        full_rank=rank == cols,
        tolerance=tol,
    )


def collinear_columns(
    design: np.ndarray,
    names: Sequence[str],
    tol: float = COLLINEARITY_TOL,
) -> Optional[List[str]]:
    """
    标准化（各列缩放到单位范数）后检查最小奇异值

    Returns:
        None 表示满秩；否则返回参与近似线性关系的列名
    """
    design = np.asarray(design, dtype=float)
    if design.shape[0] < design.shape[1]:
        return list(names)
    norms = np.linalg.norm(design, axis=0)
    zero = norms == 0.0
    if np.any(zero):
        return [names[j] for j in np.flatnonzero(zero)]
    scaled = design / norms
    _, s, vt = np.linalg.svd(scaled, full_matrices=False)
    if s[-1] >= tol:
        return None
    loadings = np.abs(vt[-1])
    involved = np.flatnonzero(loadings > 0.1 * loadings.max())
    return [names[j] for j in involved]


def constant_columns(design: np.ndarray, names: Sequence[str], skip: Sequence[int] = (0,)) -> List[str]:
    """找出取值恒定的非截距列（与截距共线）"""
    design = np.asarray(design, dtype=float)
    out = []
    for j in range(design.shape[1]):
        if j in skip:
            continue
        col = design[:, j]
        scale = max(float(np.max(np.abs(col))), 1.0)
        if float(np.ptp(col)) <= 1e-12 * scale:
            out.append(names[j])
    return out


def ensure_identified(design: np.ndarray, names: Sequence[str], context: str) -> None:
    """设计矩阵共线时抛出 IdentificationException，指明共线列"""
    constant = constant_columns(design, names)
    if constant:
        raise IdentificationException(
            f"{context}: 列 {', '.join(constant)} 取值恒定，与截距共线",
            {"collinear": ["const"] + constant},
        )
    involved = collinear_columns(design, names)
    if involved is not None:
        raise IdentificationException(
            f"{context}: 设计矩阵共线，涉及列 {', '.join(involved)}",
            {"collinear": involved},
        )


def least_squares(design: np.ndarray, response: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """（加权）最小二乘系数"""
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if weights is not None:
        root = np.sqrt(np.asarray(weights, dtype=float))
        design = design * root[:, None]
        response = response * root
    coef, *_ = np.linalg.lstsq(design, response, rcond=None)
    return coef
