# -*- coding: utf-8 -*-
"""
相关性筛选模块
对全部研究变量两两计算 Kendall tau-b 及其 p 值, 并据此选择混杂变量:
与处理变量和结果变量的相关都显著 (p < 阈值) 的候选变量。
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ConfigError, TreatmentUncorrelatedError, ZeroVarianceError
from .featurize import STUDY_VARIABLES, Unit

logger = logging.getLogger(__name__)

# H 是 U / O 的时间互补量 (同一天内三者之和受时刻约束), 不作为它们的混杂变量
DEFAULT_EXCLUSIONS = [("O", "SC"), ("E", "O"), ("U", "H"), ("O", "H")]


@dataclass
class ScreeningConfig:
    """筛选配置"""
    p_threshold: float = 0.1
    outcome: str = "S"
    candidates: Optional[List[str]] = None  # None 表示除处理/结果外的全部研究变量
    exclusions: List[Tuple[str, str]] = field(default_factory=lambda: list(DEFAULT_EXCLUSIONS))
    stratum: Optional[int] = None  # 只用某个采样时刻的单元计算相关矩阵

    def __post_init__(self):
        if not 0 < self.p_threshold < 1:
            raise ConfigError(f"p_threshold 必须在 (0, 1) 内, 当前 {self.p_threshold}")
        unknown = [v for v in (self.candidates or []) + [self.outcome] if v not in STUDY_VARIABLES]
        if unknown:
            raise ConfigError(f"未知研究变量: {unknown}")

    @classmethod
    def from_dict(cls, config: Optional[Dict]) -> "ScreeningConfig":
        config = config or {}
        exclusions = config.get('exclusions', DEFAULT_EXCLUSIONS)
        stratum = config.get('stratum')
        return cls(
            p_threshold=float(config.get('p_threshold', 0.1)),
            outcome=config.get('outcome', "S"),
            candidates=list(config['candidates']) if config.get('candidates') else None,
            exclusions=[(str(a), str(b)) for a, b in exclusions],
            stratum=int(stratum) if stratum is not None else None,
        )


@dataclass
class CorrelationMatrix:
    """两两 Kendall 相关矩阵 (对角线 tau = 1, p = 0)"""
    variables: List[str]
    tau: np.ndarray
    p: np.ndarray

    def _index(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise KeyError(f"相关矩阵中没有变量 {name}") from None

    def p_value(self, a: str, b: str) -> float:
        return float(self.p[self._index(a), self._index(b)])

    def tau_value(self, a: str, b: str) -> float:
        return float(self.tau[self._index(a), self._index(b)])

    @classmethod
    def from_p_values(cls, variables: Sequence[str], p_values: Dict[Tuple[str, str], float],
                      default: float = 1.0) -> "CorrelationMatrix":
        """由已知 p 值构造矩阵 (tau 未知时记为 0)"""
        variables = list(variables)
        n = len(variables)
        p = np.full((n, n), default, dtype=float)
        tau = np.zeros((n, n), dtype=float)
        np.fill_diagonal(p, 0.0)
        np.fill_diagonal(tau, 1.0)
        for (a, b), value in p_values.items():
            i, j = variables.index(a), variables.index(b)
            p[i, j] = p[j, i] = value
        return cls(variables, tau, p)

    def p_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.p, index=self.variables, columns=self.variables)

    def tau_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.tau, index=self.variables, columns=self.variables)


@dataclass
class ConfounderSet:
    treatment: str
    outcome: str
    confounders: List[str]

    def __post_init__(self):
        if self.treatment in self.confounders or self.outcome in self.confounders:
            raise ValueError("处理变量和结果变量不能作为混杂变量")


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """
    Kendall tau-b (含并列校正) 及双侧 p 值 (正态近似, 并列校正方差)

    Args:
        x, y: 等长数值序列, 长度 >= 2

    Returns:
        (tau, p)

    Raises:
        ValueError: 长度不一致或样本过少
        ZeroVarianceError: 任一序列为常数
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"长度不一致: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("至少需要 2 个样本")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ZeroVarianceError("zero variance: 常数序列无法计算 Kendall 相关")

    result = stats.kendalltau(x, y, variant='b', method='asymptotic')
    tau, p = float(result.statistic), float(result.pvalue)
    if np.isnan(tau):
        raise ZeroVarianceError("zero variance: tau-b 分母为 0")
    return tau, p


def build_correlation_matrix(
    units: Sequence[Unit],
    variables: Sequence[str] = tuple(STUDY_VARIABLES),
    threads: int = 1,
) -> CorrelationMatrix:
    """
    在汇总单元上计算两两相关

    人格分数缺失的单元只在涉及该分数的变量对中被跳过。

    Args:
        units: 研究单元
        variables: 变量列表
        threads: 并行线程数

    Returns:
        CorrelationMatrix
    """
    if len(units) < 2:
        raise ValueError("至少需要 2 个单元")
    variables = list(variables)
    columns = {
        name: np.array([np.nan if u.value(name) is None else u.value(name) for u in units], dtype=float)
        for name in variables
    }

    def cell(pair: Tuple[int, int]) -> Tuple[float, float]:
        a, b = columns[variables[pair[0]]], columns[variables[pair[1]]]
        present = ~(np.isnan(a) | np.isnan(b))
        try:
            return kendall_tau(a[present], b[present])
        except ZeroVarianceError as e:
            raise ZeroVarianceError(f"{e} ({variables[pair[0]]}, {variables[pair[1]]})") from e

    pairs = list(combinations(range(len(variables)), 2))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(cell, pairs))

    n = len(variables)
    tau = np.eye(n)
    p = np.zeros((n, n))
    for (i, j), (t, pv) in zip(pairs, results):
        tau[i, j] = tau[j, i] = t
        p[i, j] = p[j, i] = pv

    logger.info(f"相关矩阵计算完成: 变量={n}, 单元={len(units)}")
    return CorrelationMatrix(variables, tau, p)


def check_treatment_correlated(cm: CorrelationMatrix, treatment: str, cfg: ScreeningConfig):
    """处理变量与结果变量的相关不显著时拒绝研究"""
    p = cm.p_value(treatment, cfg.outcome)
    if not p < cfg.p_threshold:
        raise TreatmentUncorrelatedError(
            f"treatment uncorrelated with outcome: p({treatment}, {cfg.outcome}) = {p:.4g}"
        )


def select_confounders(
    cm: CorrelationMatrix,
    treatment: str,
    outcome: str,
    candidates: Optional[Sequence[str]] = None,
    cfg: Optional[ScreeningConfig] = None,
) -> ConfounderSet:
    """
    选择与处理变量、结果变量均显著相关的候选变量, 保持候选顺序

    Args:
        cm: 相关矩阵
        treatment: 处理变量
        outcome: 结果变量
        candidates: 候选变量 (默认矩阵中全部变量)
        cfg: 筛选配置 (阈值与排除对)
    """
    if treatment == outcome:
        raise ValueError("处理变量与结果变量不能相同")
    cfg = cfg or ScreeningConfig()
    if candidates is None:
        candidates = cfg.candidates or cm.variables
    excluded = {b for a, b in cfg.exclusions if a == treatment}

    chosen = []
    for name in candidates:
        if name in (treatment, outcome) or name in excluded:
            continue
        if cm.p_value(name, treatment) < cfg.p_threshold and cm.p_value(name, outcome) < cfg.p_threshold:
            chosen.append(name)

    logger.info(f"处理变量 {treatment} 的混杂变量: {chosen}")
    return ConfounderSet(treatment, outcome, chosen)
