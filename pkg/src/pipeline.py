# -*- coding: utf-8 -*-
"""
QuasiCause 主引擎
串联 数据接入 → 位置聚类 → 地点标注 → 特征构建 → 相关筛选 → 研究组合, 并写出结果。
各阶段结果在引擎内缓存; 研究组合在线程池中并行执行。
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import pandas as pd

from . import __version__
from .config import StudyConfig
from .design import SubpopulationFilter, TreatmentRule
from .errors import QuasiCauseError, StudyRefusedError
from .estimate import StudyOptions, StudyOutcome, run_study
from .featurize import Unit, build_units, units_frame, units_from_frame
from .geocluster import (LocationCluster, Visit, cluster_locations, clusters_frame, clusters_from_frame,
                         derive_visits, visits_frame, visits_from_frame)
from .ingest import RawDataset, load_dataset, validate_dataset
from .placesem import (CampusBoundary, CsvPoiLookup, PlaceLabel, label_users, labels_frame, labels_from_frame,
                       load_campus, load_poi)
from .reporting import ReportWriter, read_export
from .screen import CorrelationMatrix, build_correlation_matrix

logger = logging.getLogger(__name__)

STAGES = ("cluster", "label", "featurize", "screen")


def _stage(name: str):
    """把阶段内抛出的异常标注上阶段名"""
    def decorator(func):
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except QuasiCauseError as e:
                raise e.with_stage(name)
        wrapper.__name__ = func.__name__
        wrapper.__doc__ = func.__doc__
        return wrapper
    return decorator


class QuasiCauseEngine:
    """QuasiCause 核心引擎"""

    def __init__(self, config: StudyConfig):
        """
        初始化引擎

        Args:
            config: 已校验的研究配置
        """
        self.config = config
        self.writer = ReportWriter(config.output_dir, config.config_hash, config.seed)
        self._dataset: Optional[RawDataset] = None
        self._clusters: Optional[List[LocationCluster]] = None
        self._visits: Optional[List[Visit]] = None
        self._labels: Optional[Dict[str, Dict[int, PlaceLabel]]] = None
        self._no_home: List[str] = []
        self._units: Optional[List[Unit]] = None
        self._correlation: Optional[CorrelationMatrix] = None
        logger.info(f"QuasiCause 引擎初始化完成: 输出目录={config.output_dir}")

    # ==================== 阶段 ====================

    @_stage("ingest")
    def dataset(self) -> RawDataset:
        if self._dataset is None:
            self._dataset = load_dataset(self.config.data_root, self.config.timezone)
        return self._dataset

    @_stage("geocluster")
    def clusters(self) -> Tuple[List[LocationCluster], List[Visit]]:
        if self._clusters is None:
            ds = self.dataset()
            gps = {u: ds.gps[u] for u in ds.active_users}
            clusters, assignment = cluster_locations(gps, ds.activity, self.config.clustering)
            self._clusters = clusters
            self._visits = derive_visits(assignment, self.config.clustering)
        return self._clusters, self._visits

    def _lookup(self) -> Tuple[CsvPoiLookup, Optional[CampusBoundary]]:
        lookup = load_poi(self.config.poi_file) if self.config.poi_file else CsvPoiLookup([])
        campus = load_campus(self.config.campus_file) if self.config.campus_file else None
        if campus is None:
            logger.warning("未配置校园边界, 非 POI 簇将标为其他")
        return lookup, campus

    @_stage("placesem")
    def labels(self) -> Dict[str, Dict[int, PlaceLabel]]:
        if self._labels is None:
            clusters, visits = self.clusters()
            self._labels = self._label(clusters, visits)
        return self._labels

    def _label(self, clusters: List[LocationCluster], visits: List[Visit]) -> Dict[str, Dict[int, PlaceLabel]]:
        ds = self.dataset()
        lookup, campus = self._lookup()
        labels, self._no_home = label_users(clusters, visits, ds.active_users, ds.tz, lookup, campus,
                                            self.config.labeling)
        return labels

    @_stage("featurize")
    def units(self) -> List[Unit]:
        if self._units is None:
            _, visits = self.clusters()
            self._units = build_units(self.dataset(), visits, self.labels(), self.config.grid,
                                      self.config.features, self.config.threads)
        return self._units

    @_stage("screen")
    def correlation(self) -> CorrelationMatrix:
        if self._correlation is None:
            self._correlation = self._correlate(self.units())
        return self._correlation

    def _correlate(self, units: List[Unit]) -> CorrelationMatrix:
        stratum = self.config.screening.stratum
        if stratum is not None:
            units = [u for u in units if u.t_index == stratum]
            logger.info(f"仅用采样时刻 {stratum} 的单元计算相关矩阵: {len(units)} 个")
        return build_correlation_matrix(units, threads=self.config.threads)

    # ==================== 研究 ====================

    def participants(self) -> Dict:
        """进入研究的参与者 (产生了单元且有人格分数)"""
        ds = self.dataset()
        users = {u.user_id for u in self.units()}
        return {uid: scores for uid, scores in ds.personality.items() if uid in users}

    def combinations(self) -> List[Tuple[TreatmentRule, SubpopulationFilter]]:
        return [(rule, sub) for rule in self.config.rules() for sub in self.config.subpopulations]

    def run_one(self, rule: TreatmentRule, subpopulation: SubpopulationFilter) -> Dict:
        """执行单个研究; 被拒绝的研究记录原因而不中断整体运行"""
        options = StudyOptions(
            screening=self.config.screening,
            design=self.config.design,
            genetic=self.config.genetic(threads=1),
            n_strata=len(self.config.grid),
            force=self.config.force,
        )
        record = {"treatment": rule.variable, "alpha": rule.alpha, "rule": rule.kind.value,
                  "subpopulation": subpopulation.value}
        try:
            outcome = run_study(self.units(), self.participants(), self.correlation(), rule, subpopulation, options)
        except StudyRefusedError as e:
            logger.warning(f"研究被拒绝 [{rule.variable}/α={rule.alpha}/{subpopulation.value}]: {e}")
            record.update({"status": "refused", "error": type(e).__name__, "stage": e.stage,
                           "reason": str(e), "details": e.details})
            return record
        record.update(self._outcome_record(outcome))
        record["_outcome"] = outcome
        return record

    @staticmethod
    def _outcome_record(outcome: StudyOutcome) -> Dict:
        return {
            "status": "ok",
            "confounders": outcome.confounders,
            "weights": dict(zip(outcome.confounders, outcome.search.weights.weights)),
            "evaluations": outcome.search.evaluations,
            "design": outcome.design,
            "balance": outcome.search.report.to_dict(),
            "estimate": outcome.estimate.to_dict(),
        }

    def run_studies(self) -> List[Dict]:
        # 先在主线程完成上游阶段, 线程池里只读缓存
        self.correlation()
        self.participants()
        combos = self.combinations()
        logger.info(f"开始执行 {len(combos)} 个研究组合, 线程={self.config.threads}")
        with ThreadPoolExecutor(max_workers=self.config.threads) as executor:
            return list(executor.map(lambda c: self.run_one(*c), combos))

    # ==================== 输出 ====================

    def write_cluster_outputs(self):
        clusters, visits = self.clusters()
        self.writer.write_csv("clusters.csv", clusters_frame(clusters))
        self.writer.write_csv("visits.csv", visits_frame(visits))

    def write_label_outputs(self):
        self.writer.write_csv("labels.csv", labels_frame(self.labels()))

    def write_unit_outputs(self):
        self.writer.write_csv("units.csv", units_frame(self.units()))

    def write_correlation_outputs(self):
        cm = self.correlation()
        self.writer.write_csv("correlation.csv", cm.p_frame().rename_axis("variable"), index=True)
        self.writer.write_csv("correlation_tau.csv", cm.tau_frame().rename_axis("variable"), index=True)

    def run(self) -> Dict:
        """
        执行完整流水线并写出全部结果

        Returns:
            report.json 的内容
        """
        self.write_cluster_outputs()
        self.write_label_outputs()
        self.write_unit_outputs()
        self.write_correlation_outputs()

        records = self.run_studies()
        outcomes = [r.pop("_outcome", None) for r in records]

        effects, balance, matches = [], [], []
        for record, outcome in zip(records, outcomes):
            if outcome is None:
                continue
            key = (record["treatment"], record["alpha"], record["subpopulation"])
            est = outcome.estimate
            effects.append(key + (est.ate, est.pct_improvement, est.pct_ci_low, est.pct_ci_high, est.n_pairs,
                                  est.n_distinct_controls, est.naive_ate, est.p_value, est.forced))
            report = outcome.search.report
            for name, value in report.smd.items():
                balance.append(key + (name, value, report.pre_smd.get(name)))
            for stratum in outcome.search.matched:
                for pair in stratum.pairs:
                    matches.append(key + (stratum.t_index, pair.treated.key, pair.control.key, pair.distance))

        study_keys = ["treatment", "alpha", "subpop"]
        self.writer.write_csv("effects.csv", pd.DataFrame(effects, columns=study_keys + [
            "ate", "pct_improvement", "ci_low", "ci_high", "n_pairs", "n_distinct_controls", "naive_ate",
            "p_value", "forced"]))
        self.writer.write_csv("balance.csv", pd.DataFrame(balance, columns=study_keys + [
            "confounder", "smd", "pre_smd"]))
        self.writer.write_csv("matches.csv", pd.DataFrame(matches, columns=study_keys + [
            "t_index", "treated_unit", "control_unit", "distance"]))
        self.writer.write_json("design.json", {"studies": [
            {"treatment": r["treatment"], "alpha": r["alpha"], "subpopulation": r["subpopulation"],
             "status": r["status"], "design": r.get("design") or r.get("details", {}).get("design")}
            for r in records
        ]})

        ds = self.dataset()
        report = {
            "version": __version__,
            "config": self.config.raw,
            "n_users": len(ds.users),
            "excluded_users": ds.excluded,
            "no_home_users": self._no_home,
            "n_units": len(self.units()),
            "studies": records,
        }
        self.writer.write_json("report.json", report)
        n_ok = sum(1 for r in records if r["status"] == "ok")
        logger.info(f"流水线完成: 研究={len(records)}, 成功={n_ok}, 拒绝={len(records) - n_ok}")
        return report

    def run_stage(self, name: str):
        """
        只执行单个阶段并写出其导出文件; 前置阶段从已有导出读回

        Raises:
            MissingArtifactError: 缺少前置导出
        """
        out = self.config.output_dir
        if name == "cluster":
            self.write_cluster_outputs()
        elif name == "label":
            clusters = clusters_from_frame(read_export(out, "clusters.csv"))
            visits = visits_from_frame(read_export(out, "visits.csv"))
            self._labels = self._label(clusters, visits)
            self.write_label_outputs()
        elif name == "featurize":
            visits = visits_from_frame(read_export(out, "visits.csv"))
            labels = labels_from_frame(read_export(out, "labels.csv"))
            self._units = build_units(self.dataset(), visits, labels, self.config.grid,
                                      self.config.features, self.config.threads)
            self.write_unit_outputs()
        elif name == "screen":
            self._units = units_from_frame(read_export(out, "units.csv"))
            self.write_correlation_outputs()
        else:
            raise ValueError(f"未知阶段: {name}")

    def validate(self) -> Dict:
        return validate_dataset(self.dataset()).to_dict()
