# -*- coding: utf-8 -*-
"""
遗传匹配模块
在协变量权重上做进化搜索, 用加权标准化距离为每个处理单元有放回地匹配
ratio 个最近对照单元, 以匹配后的标准化均值差 (SMD) 衡量平衡性。

进化流程:
1. 初始种群 = 单位权重 + 对数空间均匀采样
2. 每代: 评估适应度 → 精英保留 → 锦标赛选择 → 均匀交叉 → 对数正态变异
3. 返回历史最优权重
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .design import Stratum
from .errors import ConfigError, ConstantCovariateError, ZeroVarianceError
from .featurize import Unit

logger = logging.getLogger(__name__)

BALANCE_THRESHOLD = 0.1
_CHUNK_ROWS = 256
_PRECOMPUTE_LIMIT = 8_000_000  # 预计算平方差的元素上限 (n_t × n_c × k)


@dataclass(frozen=True)
class WeightVector:
    """每个混杂变量一个正权重 (距离矩阵的对角线)"""
    weights: Tuple[float, ...]

    def __post_init__(self):
        if any(not w > 0 for w in self.weights):
            raise ValueError(f"权重必须为正: {self.weights}")

    @classmethod
    def identity(cls, n: int) -> "WeightVector":
        return cls(tuple([1.0] * n))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def scaled(self, factor: float) -> "WeightVector":
        return WeightVector(tuple(w * factor for w in self.weights))


@dataclass(frozen=True)
class MatchedPair:
    treated: Unit
    control: Unit
    distance: float


@dataclass
class MatchedStratum:
    t_index: int
    pairs: List[MatchedPair] = field(default_factory=list)

    @property
    def pair_count(self) -> int:
        return len(self.pairs)


@dataclass
class BalanceReport:
    """匹配后平衡性报告"""
    smd: Dict[str, float]
    max_abs_smd: float
    mean_abs_smd: float
    balanced: bool
    pre_smd: Dict[str, float] = field(default_factory=dict)
    fitness_history: List[float] = field(default_factory=list)

    @classmethod
    def from_smd(cls, smd: Dict[str, float], threshold: float = BALANCE_THRESHOLD,
                 pre_smd: Optional[Dict[str, float]] = None,
                 fitness_history: Optional[List[float]] = None) -> "BalanceReport":
        values = [abs(v) for v in smd.values()]
        return cls(
            smd=dict(smd),
            max_abs_smd=max(values) if values else 0.0,
            mean_abs_smd=float(np.mean(values)) if values else 0.0,
            balanced=all(v < threshold for v in values),
            pre_smd=dict(pre_smd or {}),
            fitness_history=list(fitness_history or []),
        )

    def to_dict(self) -> Dict:
        return {
            "smd": self.smd,
            "pre_smd": self.pre_smd,
            "max_abs_smd": self.max_abs_smd,
            "mean_abs_smd": self.mean_abs_smd,
            "balanced": self.balanced,
            "fitness_history": self.fitness_history,
        }


@dataclass
class GeneticConfig:
    """遗传匹配配置"""
    population_size: int = 50
    generations: int = 30
    seed: int = 0
    weight_bounds: Tuple[float, float] = (1e-3, 1e3)
    crossover_rate: float = 0.8
    mutation_rate: float = 0.1
    mutation_sigma: float = 0.5
    elitism: int = 2
    tournament_size: int = 3
    ratio: int = 2
    balance_threshold: float = BALANCE_THRESHOLD
    fitness: str = "mean"        # mean | max
    distance: str = "diagonal"   # diagonal | mahalanobis
    threads: int = 1

    def __post_init__(self):
        low, high = self.weight_bounds
        if self.population_size < 4:
            raise ConfigError(f"population_size 必须 >= 4, 当前 {self.population_size}")
        if not 0 < low < high:
            raise ConfigError(f"weight_bounds 非法: {self.weight_bounds}")
        if not 0 <= self.elitism < self.population_size:
            raise ConfigError(f"elitism 必须在 [0, population_size) 内, 当前 {self.elitism}")
        if self.generations < 0 or self.ratio < 1 or self.tournament_size < 1:
            raise ConfigError("generations / ratio / tournament_size 取值非法")
        if self.fitness not in ("mean", "max"):
            raise ConfigError(f"未知适应度: {self.fitness}")
        if self.distance not in ("diagonal", "mahalanobis"):
            raise ConfigError(f"未知距离: {self.distance}")

    @classmethod
    def from_dict(cls, config: Optional[Dict], seed: int = 0, threads: int = 1) -> "GeneticConfig":
        config = config or {}
        bounds = config.get('weight_bounds', [1e-3, 1e3])
        return cls(
            population_size=int(config.get('population_size', 50)),
            generations=int(config.get('generations', 30)),
            seed=int(config.get('seed', seed)),
            weight_bounds=(float(bounds[0]), float(bounds[1])),
            crossover_rate=float(config.get('crossover_rate', 0.8)),
            mutation_rate=float(config.get('mutation_rate', 0.1)),
            mutation_sigma=float(config.get('mutation_sigma', 0.5)),
            elitism=int(config.get('elitism', 2)),
            tournament_size=int(config.get('tournament_size', 3)),
            ratio=int(config.get('ratio', 2)),
            balance_threshold=float(config.get('balance_threshold', BALANCE_THRESHOLD)),
            fitness=config.get('fitness', "mean"),
            distance=config.get('distance', "diagonal"),
            threads=threads,
        )


@dataclass
class GeneticResult:
    weights: WeightVector
    report: BalanceReport
    matched: List[MatchedStratum]
    history: List[float]
    evaluations: int


# ==================== 距离与匹配 ====================

def standardized_distance(a: Sequence[float], b: Sequence[float], scales: Sequence[float],
                          w: WeightVector) -> float:
    """
    加权标准化距离 sqrt(Σ w_k ((a_k − b_k) / scale_k)²)

    Raises:
        ConstantCovariateError: 某个 scale 为 0
    """
    a, b, scales = (np.asarray(v, dtype=float) for v in (a, b, scales))
    weights = w.as_array()
    if not (a.shape == b.shape == scales.shape == weights.shape):
        raise ValueError("维度不一致")
    if np.any(scales <= 0):
        raise ConstantCovariateError("constant covariate: 标准差为 0")
    return float(np.sqrt(np.sum(weights * ((a - b) / scales) ** 2)))


def covariate_matrix(units: Sequence[Unit], confounders: Sequence[str]) -> np.ndarray:
    return np.array([[u.value(c) for c in confounders] for u in units], dtype=float).reshape(
        len(units), len(confounders))


class _PreparedStratum:
    """预先标准化的分层数据, 供反复匹配使用"""

    def __init__(self, stratum: Stratum, confounders: Sequence[str], distance: str = "diagonal"):
        self.t_index = stratum.t_index
        self.treated = stratum.treated
        self.control = stratum.control
        self.raw_t = covariate_matrix(stratum.treated, confounders)
        self.raw_c = covariate_matrix(stratum.control, confounders)

        pooled = np.vstack([self.raw_t, self.raw_c])
        scales = pooled.std(axis=0, ddof=1) if len(pooled) > 1 else np.zeros(len(confounders))
        # 分层内为常数的协变量不参与距离
        self.kept = np.flatnonzero(scales > 0)
        if len(self.kept) < len(confounders):
            dropped = [confounders[i] for i in range(len(confounders)) if i not in set(self.kept)]
            logger.debug(f"分层 {self.t_index}: 常数协变量不参与距离 {dropped}")

        z_t = self.raw_t[:, self.kept] / scales[self.kept]
        z_c = self.raw_c[:, self.kept] / scales[self.kept]
        if distance == "mahalanobis" and len(self.kept) > 1:
            whitening = _inverse_sqrt(np.cov(np.vstack([z_t, z_c]), rowvar=False))
            z_t, z_c = z_t @ whitening, z_c @ whitening
        self.z_t = z_t
        self.z_c = z_c
        # 规模允许时预先算好逐协变量的平方差, 每次换权重只需一次矩阵乘
        self.sq = None
        if z_t.shape[0] * z_c.shape[0] * z_t.shape[1] <= _PRECOMPUTE_LIMIT:
            self.sq = (z_t[:, None, :] - z_c[None, :, :]) ** 2

    def nearest(self, weights: np.ndarray, ratio: int) -> Tuple[np.ndarray, np.ndarray]:
        """每个处理单元的 ratio 个最近对照 (下标, 距离); 等距时取对照顺序靠前者"""
        w = weights[self.kept]
        n_t, n_c = len(self.z_t), len(self.z_c)
        index = np.empty((n_t, ratio), dtype=int)
        dist = np.empty((n_t, ratio), dtype=float)
        r = min(ratio, n_c)
        picks = np.arange(ratio) % r
        for start in range(0, n_t, _CHUNK_ROWS):
            stop = min(start + _CHUNK_ROWS, n_t)
            if self.sq is not None:
                d2 = self.sq[start:stop] @ w
            else:
                d2 = ((self.z_t[start:stop, None, :] - self.z_c[None, :, :]) ** 2) @ w
            chosen = _smallest(d2, r)[:, picks]
            index[start:stop] = chosen
            dist[start:stop] = np.sqrt(np.take_along_axis(d2, chosen, axis=1))
        return index, dist


def _smallest(d2: np.ndarray, r: int) -> np.ndarray:
    """
    每行最小的 r 个列下标, 按 (距离, 下标) 升序

    与稳定全排序取前 r 个结果一致; 第 r 小的距离有并列的行退回稳定排序。
    """
    if r >= d2.shape[1]:
        return np.argsort(d2, axis=1, kind='stable')
    part = np.argpartition(d2, r - 1, axis=1)[:, :r]
    threshold = np.take_along_axis(d2, part, axis=1).max(axis=1)
    tied = (d2 <= threshold[:, None]).sum(axis=1) > r

    part = np.sort(part, axis=1)
    order = np.argsort(np.take_along_axis(d2, part, axis=1), axis=1, kind='stable')
    top = np.take_along_axis(part, order, axis=1)
    if tied.any():
        top[tied] = np.argsort(d2[tied], axis=1, kind='stable')[:, :r]
    return top


def _inverse_sqrt(cov: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(cov)
    values = np.where(values > 1e-12, values, np.inf)
    return vectors @ np.diag(1.0 / np.sqrt(values)) @ vectors.T


def _to_matched(prep: _PreparedStratum, index: np.ndarray, dist: np.ndarray) -> MatchedStratum:
    pairs = [
        MatchedPair(prep.treated[i], prep.control[int(index[i, k])], float(dist[i, k]))
        for i in range(index.shape[0]) for k in range(index.shape[1])
    ]
    return MatchedStratum(prep.t_index, pairs)


def match_stratum(
    stratum: Stratum,
    confounders: Sequence[str],
    w: Optional[WeightVector] = None,
    ratio: int = 2,
    distance: str = "diagonal",
) -> MatchedStratum:
    """
    有放回的加权最近邻匹配

    按处理单元顺序, 为每个处理单元选出 ratio 个最近对照; 对照不足时循环复用。
    """
    if not stratum.treated or not stratum.control:
        raise ValueError("处理组和对照组都不能为空")
    w = w or WeightVector.identity(len(confounders))
    prep = _PreparedStratum(stratum, confounders, distance)
    index, dist = prep.nearest(w.as_array(), ratio)
    return _to_matched(prep, index, dist)


# ==================== 平衡性 ====================

def _treated_sd(raw_treated: np.ndarray, confounders: Sequence[str]) -> np.ndarray:
    if raw_treated.shape[0] < 2:
        raise ZeroVarianceError("处理单元不足 2 个, 无法计算 SMD")
    sd = raw_treated.std(axis=0, ddof=1)
    if np.any(sd == 0):
        constant = [c for c, s in zip(confounders, sd) if s == 0]
        raise ZeroVarianceError(f"zero variance: 处理组内常数协变量 {constant}")
    return sd


def smd(matched: Sequence[MatchedStratum], confounder: str) -> float:
    """
    标准化均值差: 全部配对 (处理 − 对照) 的平均差, 除以去重处理单元的样本标准差

    Raises:
        ZeroVarianceError: 处理单元该变量方差为 0
    """
    diffs = [p.treated.value(confounder) - p.control.value(confounder) for m in matched for p in m.pairs]
    if not diffs:
        raise ZeroVarianceError("没有配对, 无法计算 SMD")
    distinct = {p.treated.key: p.treated.value(confounder) for m in matched for p in m.pairs}
    sd = _treated_sd(np.array(list(distinct.values()), dtype=float).reshape(-1, 1), [confounder])
    return float(np.mean(diffs) / sd[0])


def pre_match_smd(strata: Sequence[Stratum], confounders: Sequence[str]) -> Dict[str, float]:
    """匹配前 SMD: 全部处理单元与全部对照单元的均值差 / 处理组标准差"""
    raw_t = np.vstack([covariate_matrix(s.treated, confounders) for s in strata])
    raw_c = np.vstack([covariate_matrix(s.control, confounders) for s in strata])
    sd = _treated_sd(raw_t, confounders)
    diff = (raw_t.mean(axis=0) - raw_c.mean(axis=0)) / sd
    return {c: float(v) for c, v in zip(confounders, diff)}


def balance_report(
    matched: Sequence[MatchedStratum],
    confounders: Sequence[str],
    threshold: float = BALANCE_THRESHOLD,
) -> BalanceReport:
    return BalanceReport.from_smd({c: smd(matched, c) for c in confounders}, threshold)


def check_balance(report: BalanceReport, threshold: float = BALANCE_THRESHOLD) -> bool:
    """每个混杂变量的 |SMD| 都严格小于阈值"""
    return all(abs(v) < threshold for v in report.smd.values())


# ==================== 遗传搜索 ====================

class _Evaluator:
    """给定权重, 在全部分层上匹配并计算 SMD"""

    def __init__(self, preps: List[_PreparedStratum], confounders: Sequence[str], cfg: GeneticConfig):
        self.preps = preps
        self.confounders = list(confounders)
        self.cfg = cfg
        self.treated_sd = _treated_sd(np.vstack([p.raw_t for p in preps]), self.confounders)

    def smd(self, weights: np.ndarray) -> Dict[str, float]:
        total = np.zeros(len(self.confounders))
        n_pairs = 0
        for prep in self.preps:
            index, _ = prep.nearest(weights, self.cfg.ratio)
            controls = prep.raw_c[index]  # (n_t, ratio, k)
            total += (prep.raw_t[:, None, :] - controls).sum(axis=(0, 1))
            n_pairs += index.size
        values = total / n_pairs / self.treated_sd
        return {c: float(v) for c, v in zip(self.confounders, values)}

    def fitness(self, weights: np.ndarray) -> float:
        values = np.abs(list(self.smd(weights).values()))
        if values.size == 0:
            return 0.0
        return float(values.max() if self.cfg.fitness == "max" else values.mean())


def genetic_search(
    strata: Sequence[Stratum],
    confounders: Sequence[str],
    cfg: Optional[GeneticConfig] = None,
) -> GeneticResult:
    """
    进化搜索协变量权重

    单位权重总在第 0 代; 精英保留保证历史最优适应度单调不增。
    随机数只在选择/交叉/变异中按固定顺序消耗, 并行评估不影响结果。

    Args:
        strata: 已分配处理的分层
        confounders: 混杂变量
        cfg: 遗传配置

    Returns:
        GeneticResult (最优权重, 平衡报告, 匹配结果, 每代最优适应度)
    """
    cfg = cfg or GeneticConfig()
    preps = [_PreparedStratum(s, confounders, cfg.distance) for s in strata]
    evaluator = _Evaluator(preps, confounders, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = len(confounders)
    log_low, log_high = np.log(cfg.weight_bounds[0]), np.log(cfg.weight_bounds[1])

    cache: Dict[bytes, float] = {}

    def evaluate(population: List[np.ndarray]) -> List[float]:
        pending = []
        for genome in population:
            key = genome.tobytes()
            if key not in cache and key not in pending:
                pending.append(key)
        genomes = {g.tobytes(): g for g in population}
        with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as executor:
            scores = list(executor.map(lambda k: evaluator.fitness(np.exp(genomes[k])), pending))
        cache.update(zip(pending, scores))
        return [cache[g.tobytes()] for g in population]

    def tournament(scores: List[float]) -> int:
        contenders = rng.integers(0, len(scores), size=cfg.tournament_size)
        return int(min(contenders, key=lambda i: (scores[i], i)))

    population = [np.zeros(n)] + [rng.uniform(log_low, log_high, size=n) for _ in range(cfg.population_size - 1)]
    scores = evaluate(population)
    best_idx = min(range(len(scores)), key=lambda i: (scores[i], i))
    best, best_score = population[best_idx].copy(), scores[best_idx]
    history = [best_score]

    for generation in range(1, cfg.generations + 1):
        ranked = sorted(range(len(population)), key=lambda i: (scores[i], i))
        children = [population[i].copy() for i in ranked[:cfg.elitism]]
        while len(children) < cfg.population_size:
            mother = population[tournament(scores)]
            father = population[tournament(scores)]
            if rng.random() < cfg.crossover_rate:
                mask = rng.random(n) < 0.5
                child = np.where(mask, mother, father)
            else:
                child = mother.copy()
            mutate = rng.random(n) < cfg.mutation_rate
            child = child + mutate * rng.normal(0.0, cfg.mutation_sigma, size=n)
            children.append(np.clip(child, log_low, log_high))

        population = children
        scores = evaluate(population)
        gen_idx = min(range(len(scores)), key=lambda i: (scores[i], i))
        if scores[gen_idx] < best_score:
            best, best_score = population[gen_idx].copy(), scores[gen_idx]
        history.append(best_score)
        logger.debug(f"第 {generation} 代: 最优适应度={best_score:.5f}")

    weights = WeightVector(tuple(float(v) for v in np.exp(best)))
    matched = [_to_matched(p, *p.nearest(weights.as_array(), cfg.ratio)) for p in preps]
    report = BalanceReport.from_smd(
        evaluator.smd(weights.as_array()),
        cfg.balance_threshold,
        pre_smd=pre_match_smd(strata, confounders),
        fitness_history=history,
    )
    logger.info(f"遗传匹配完成: 评估={len(cache)}, 最优适应度={best_score:.5f}, "
                f"max|SMD|={report.max_abs_smd:.4f}, 平衡={report.balanced}")
    return GeneticResult(weights, report, matched, history, len(cache))
