# -*- coding: utf-8 -*-
"""
效应估计模块
汇总平均处理效应 (ATE)、相对改善百分比、配对 t 检验与 95% 置信区间,
以及串联 筛选 → 设计 → 遗传匹配 → 估计 的单个研究执行器。
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .design import DesignConfig, SubpopulationFilter, TreatmentRule, design_strata, design_summary, filter_subpopulation
from .errors import InsufficientDataError, UnbalancedMatchingError, ZeroVarianceError
from .featurize import Unit
from .ingest import PersonalityScores
from .matchopt import GeneticConfig, GeneticResult, MatchedStratum, check_balance, genetic_search
from .screen import CorrelationMatrix, ScreeningConfig, check_treatment_correlated, select_confounders
from .simulate import naive_ate

logger = logging.getLogger(__name__)


@dataclass
class TTestResult:
    mean: float
    sd: float
    n: int
    t_stat: Optional[float]
    df: int
    p_value: Optional[float]
    ci95_low: float
    ci95_high: float
    degenerate: bool


@dataclass
class EffectEstimate:
    """单个研究的效应估计"""
    treatment: str
    alpha: float
    subpopulation: str
    ate: float
    pct_improvement: float
    t_stat: Optional[float]
    df: int
    p_value: Optional[float]
    ci95_low: float
    ci95_high: float
    pct_ci_low: float
    pct_ci_high: float
    n_pairs: int
    n_treated: int
    n_distinct_controls: int
    control_mean: float
    naive_ate: float
    degenerate: bool
    forced: bool = False  # 平衡性未通过但强制输出

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class StudyOptions:
    """单个研究共享的配置"""
    screening: ScreeningConfig = field(default_factory=ScreeningConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    genetic: GeneticConfig = field(default_factory=GeneticConfig)
    n_strata: int = 6
    force: bool = False


@dataclass
class StudyOutcome:
    rule: TreatmentRule
    subpopulation: SubpopulationFilter
    confounders: List[str]
    design: Dict
    search: GeneticResult
    estimate: EffectEstimate


def _differences(matched: Sequence[MatchedStratum]) -> np.ndarray:
    return np.array([p.treated.S - p.control.S for m in matched for p in m.pairs], dtype=float)


def pooled_ate(matched: Sequence[MatchedStratum]) -> float:
    """全部分层全部配对的 (S_处理 − S_对照) 均值"""
    diffs = _differences(matched)
    if diffs.size == 0:
        raise InsufficientDataError("没有配对, 无法估计 ATE")
    return float(diffs.mean())


def control_mean(matched: Sequence[MatchedStratum]) -> float:
    """全部配对中对照单元 S 的均值 (重复匹配按次数计)"""
    values = [p.control.S for m in matched for p in m.pairs]
    if not values:
        raise InsufficientDataError("没有配对, 无法计算对照均值")
    return float(np.mean(values))


def pct_improvement(ate: float, matched: Sequence[MatchedStratum]) -> float:
    """ATE 相对对照均值的百分比"""
    mean = control_mean(matched)
    if mean == 0:
        raise InsufficientDataError("对照组压力均值为 0, 无法计算相对改善")
    return ate / mean * 100.0


def paired_t_test(differences: Sequence[float]) -> TTestResult:
    """
    配对差值对 0 的单样本 t 检验

    Args:
        differences: 配对差值, 至少 2 个

    Returns:
        TTestResult; 标准差为 0 时 degenerate=True, t 与 p 为 None, 置信区间收缩为点
    """
    diffs = np.asarray(differences, dtype=float)
    n = diffs.size
    if n < 2:
        raise InsufficientDataError(f"t 检验至少需要 2 个差值, 当前 {n}")
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    df = n - 1

    if sd == 0:
        return TTestResult(mean, 0.0, n, None, df, None, mean, mean, True)

    se = sd / math.sqrt(n)
    t_stat = mean / se
    p_value = float(2 * stats.t.sf(abs(t_stat), df))
    half = float(stats.t.ppf(0.975, df)) * se
    return TTestResult(mean, sd, n, t_stat, df, p_value, mean - half, mean + half, False)


def estimate_effect(
    matched: Sequence[MatchedStratum],
    rule: TreatmentRule,
    subpopulation: SubpopulationFilter,
    naive: float,
    forced: bool = False,
) -> EffectEstimate:
    diffs = _differences(matched)
    ate = pooled_ate(matched)
    test = paired_t_test(diffs)
    base = control_mean(matched)
    pct = pct_improvement(ate, matched)
    return EffectEstimate(
        treatment=rule.variable,
        alpha=rule.alpha,
        subpopulation=subpopulation.value,
        ate=ate,
        pct_improvement=pct,
        t_stat=test.t_stat,
        df=test.df,
        p_value=test.p_value,
        ci95_low=test.ci95_low,
        ci95_high=test.ci95_high,
        pct_ci_low=test.ci95_low / base * 100.0,
        pct_ci_high=test.ci95_high / base * 100.0,
        n_pairs=int(diffs.size),
        n_treated=len({p.treated.key for m in matched for p in m.pairs}),
        n_distinct_controls=len({p.control.key for m in matched for p in m.pairs}),
        control_mean=base,
        naive_ate=naive,
        degenerate=test.degenerate,
        forced=forced,
    )


def run_study(
    units: Sequence[Unit],
    participants: Dict[str, PersonalityScores],
    cm: CorrelationMatrix,
    rule: TreatmentRule,
    subpopulation: SubpopulationFilter,
    options: Optional[StudyOptions] = None,
) -> StudyOutcome:
    """
    执行单个 (处理变量, α, 子人群) 研究

    顺序: 相关性检查 → 混杂变量选择 → 子人群 → 分层设计 → 遗传匹配 → 平衡性检查 → 估计

    Raises:
        TreatmentUncorrelatedError: 处理与结果不相关
        DegenerateDesignError: 没有可用分层
        UnbalancedMatchingError: 匹配后未平衡且未强制
        InsufficientDataError: 配对或方差不足
    """
    options = options or StudyOptions()
    screening = options.screening
    tag = f"{rule.variable}/α={rule.alpha}/{subpopulation.value}"

    check_treatment_correlated(cm, rule.variable, screening)
    confounders = select_confounders(cm, rule.variable, screening.outcome, screening.candidates, screening).confounders

    members = filter_subpopulation(units, participants, subpopulation)
    complete = [u for u in members if all(u.value(c) is not None for c in confounders)]
    if len(complete) < len(members):
        logger.warning(f"[{tag}] {len(members) - len(complete)} 个单元缺少混杂变量, 已剔除")

    strata = design_strata(complete, rule, options.n_strata, options.design)
    summary = design_summary(strata, rule)

    try:
        search = genetic_search(strata, confounders, options.genetic)
    except ZeroVarianceError as e:
        raise InsufficientDataError(f"{e}", details={"design": summary}) from e

    report = search.report
    balanced = check_balance(report, options.genetic.balance_threshold)
    if not balanced and not options.force:
        raise UnbalancedMatchingError(
            f"匹配后未平衡: max|SMD| = {report.max_abs_smd:.4f}",
            details={"confounders": confounders, "design": summary, "balance": report.to_dict(),
                     "weights": list(search.weights.weights)},
        )
    if not balanced:
        logger.warning(f"[{tag}] 平衡性未通过, --force 强制输出估计")

    estimate = estimate_effect(search.matched, rule, subpopulation,
                               naive_ate(complete, rule, options.n_strata, options.design),
                               forced=not balanced)
    logger.info(f"[{tag}] ATE={estimate.ate:.4f} ({estimate.pct_improvement:.2f}%), "
                f"配对={estimate.n_pairs}, p={estimate.p_value}")
    return StudyOutcome(rule, subpopulation, confounders, summary, search, estimate)
