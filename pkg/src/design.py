# -*- coding: utf-8 -*-
"""
研究设计模块
把连续暴露量转换为二元处理 (处理组 / 对照组 / 排除), 按采样时刻分层,
并按人格特质筛选子人群。
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateDesignError
from .featurize import STUDY_VARIABLES, Unit
from .ingest import PersonalityScores

logger = logging.getLogger(__name__)


class TreatmentKind(Enum):
    """处理规则类型"""
    LOW_TAIL = "low_tail"      # 低于均值为处理组
    HIGH_TAIL = "high_tail"    # 高于均值为处理组
    POSITIVE = "positive"      # 大于 0 为处理组


@dataclass(frozen=True)
class TreatmentRule:
    """
    处理规则

    Attributes:
        variable: 处理变量
        kind: 规则类型
        alpha: 排除带宽, [0, 1); POSITIVE 忽略
        reference: 计算均值所用的变量 (默认即处理变量)
    """
    variable: str
    kind: TreatmentKind
    alpha: float = 0.0
    reference: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ConfigError(f"alpha 必须在 [0, 1) 内, 当前 {self.alpha}")
        for name in (self.variable, self.reference):
            if name is not None and name not in STUDY_VARIABLES:
                raise ConfigError(f"未知研究变量: {name}")

    @property
    def reference_variable(self) -> str:
        return self.reference or self.variable


@dataclass
class DesignConfig:
    """设计配置"""
    pooled_mean: bool = False        # 用全部采样时刻的均值代替分层均值
    o_rule_uses_campus_mean: bool = False  # O 规则的阈值按 U 的均值计算

    @classmethod
    def from_dict(cls, config: Optional[Dict]) -> "DesignConfig":
        config = config or {}
        return cls(
            pooled_mean=bool(config.get('pooled_mean', False)),
            o_rule_uses_campus_mean=bool(config.get('o_rule_uses_campus_mean', False)),
        )

    def rule(self, variable: str, kind: TreatmentKind, alpha: float = 0.0) -> TreatmentRule:
        reference = "U" if self.o_rule_uses_campus_mean and variable == "O" and kind != TreatmentKind.POSITIVE else None
        return TreatmentRule(variable, kind, alpha, reference)


@dataclass
class Stratum:
    """一个采样时刻内的分组结果"""
    t_index: int
    treated: List[Unit] = field(default_factory=list)
    control: List[Unit] = field(default_factory=list)
    excluded: List[Unit] = field(default_factory=list)
    mean: Optional[float] = None

    @property
    def is_degenerate(self) -> bool:
        return not self.treated or not self.control


class SubpopulationFilter(Enum):
    """子人群: 特质分数严格高于参与者均值"""
    ALL = "all"
    EXTROVERTS = "extroverts"
    NEUROTICS = "neurotics"

    @property
    def trait(self) -> Optional[str]:
        return {
            SubpopulationFilter.ALL: None,
            SubpopulationFilter.EXTROVERTS: "extroversion",
            SubpopulationFilter.NEUROTICS: "neuroticism",
        }[self]


def _variable_mean(units: Sequence[Unit], name: str) -> float:
    return float(np.mean([u.value(name) for u in units]))


def assign_treatment(
    units: Sequence[Unit],
    rule: TreatmentRule,
    t_index: Optional[int] = None,
    mean: Optional[float] = None,
) -> Stratum:
    """
    在一个分层内分配处理

    LOW_TAIL: v < μ(1−α) 为处理组, v ≥ μ(1+α) 为对照组, 其余排除;
    HIGH_TAIL: v > μ(1+α) 为处理组, v ≤ μ(1−α) 为对照组, 其余排除;
    POSITIVE: v > 0 为处理组, 否则为对照组。

    Args:
        units: 该分层的单元
        rule: 处理规则
        t_index: 分层编号 (默认取第一个单元的 t_index)
        mean: 外部给定的 μ (默认为本分层参考变量的均值)

    Raises:
        DegenerateDesignError: 处理组或对照组为空
    """
    if not units:
        raise DegenerateDesignError("degenerate design: 分层为空")
    if t_index is None:
        t_index = units[0].t_index

    stratum = Stratum(t_index)
    if rule.kind == TreatmentKind.POSITIVE:
        for unit in units:
            (stratum.treated if unit.value(rule.variable) > 0 else stratum.control).append(unit)
    else:
        mu = mean if mean is not None else _variable_mean(units, rule.reference_variable)
        stratum.mean = mu
        low, high = mu * (1 - rule.alpha), mu * (1 + rule.alpha)
        for unit in units:
            v = unit.value(rule.variable)
            if rule.kind == TreatmentKind.LOW_TAIL:
                group = stratum.treated if v < low else stratum.control if v >= high else stratum.excluded
            else:
                group = stratum.treated if v > high else stratum.control if v <= low else stratum.excluded
            group.append(unit)

    if stratum.is_degenerate:
        raise DegenerateDesignError(
            f"degenerate design: t_index={t_index}, 处理组={len(stratum.treated)}, 对照组={len(stratum.control)}"
        )
    return stratum


def stratify(units: Sequence[Unit], n_strata: int = 6) -> List[List[Unit]]:
    """按采样时刻分层, 返回 n_strata 个单元列表"""
    strata: List[List[Unit]] = [[] for _ in range(n_strata)]
    for unit in units:
        strata[unit.t_index].append(unit)
    return strata


def design_strata(
    units: Sequence[Unit],
    rule: TreatmentRule,
    n_strata: int = 6,
    cfg: Optional[DesignConfig] = None,
) -> List[Stratum]:
    """
    分层并在每层分配处理

    退化分层 (处理组或对照组为空) 被跳过; 所有分层都退化时拒绝研究。
    """
    cfg = cfg or DesignConfig()
    pooled = _variable_mean(units, rule.reference_variable) if cfg.pooled_mean and units else None

    strata = []
    for t_index, members in enumerate(stratify(units, n_strata)):
        if not members:
            continue
        try:
            strata.append(assign_treatment(members, rule, t_index, pooled))
        except DegenerateDesignError as e:
            logger.warning(f"跳过分层: {e}")

    if not strata:
        raise DegenerateDesignError(f"degenerate design: {rule.variable} 没有可用分层")
    return strata


def filter_subpopulation(
    units: Sequence[Unit],
    participants: Dict[str, PersonalityScores],
    subpopulation: SubpopulationFilter,
) -> List[Unit]:
    """
    保留特质分数严格高于参与者均值的用户的单元

    均值按参与者计算 (不是按单元); 没有人格分数的用户不进入子人群。
    """
    trait = subpopulation.trait
    if trait is None:
        return list(units)
    if not participants:
        return []

    scores = {uid: p.trait(trait) for uid, p in participants.items()}
    mean = float(np.mean(list(scores.values())))
    keep = {uid for uid, score in scores.items() if score > mean}
    logger.debug(f"子人群 {subpopulation.value}: 均值={mean:.3f}, 参与者={len(keep)}/{len(scores)}")
    return [u for u in units if u.user_id in keep]


def design_summary(strata: Sequence[Stratum], rule: TreatmentRule) -> Dict:
    """design.json 中单个研究的记录"""
    return {
        "variable": rule.variable,
        "rule": rule.kind.value,
        "alpha": rule.alpha,
        "reference": rule.reference_variable,
        "strata": [
            {
                "t_index": s.t_index,
                "mean": s.mean,
                "treated": len(s.treated),
                "control": len(s.control),
                "excluded": len(s.excluded),
            }
            for s in strata
        ],
    }
