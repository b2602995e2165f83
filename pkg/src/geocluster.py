# -*- coding: utf-8 -*-
"""
位置聚类模块
顺序式 50 米质心聚类 (逐点加入首个足够近的簇, 否则新建簇),
并由聚类结果推导带起止时间的停留 (Visit)。
"""
import logging
import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from .ingest import ActivityClass, ActivitySample, GpsSample

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371000.0

MOVING_CLASSES = (ActivityClass.WALKING, ActivityClass.RUNNING)


@dataclass
class ClusterConfig:
    """聚类配置"""
    accuracy_max_m: float = 50.0
    radius_m: float = 50.0
    moving_window_s: int = 300
    speed_threshold_mps: float = 1.5
    max_gap_s: int = 1800
    per_user: bool = True

    @classmethod
    def from_dict(cls, config: Optional[Dict]) -> "ClusterConfig":
        config = config or {}
        return cls(
            accuracy_max_m=float(config.get('accuracy_max_m', 50.0)),
            radius_m=float(config.get('radius_m', 50.0)),
            moving_window_s=int(config.get('moving_window_s', 300)),
            speed_threshold_mps=float(config.get('speed_threshold_mps', 1.5)),
            max_gap_s=int(config.get('max_gap_s', 1800)),
            per_user=bool(config.get('per_user', True)),
        )


@dataclass
class LocationCluster:
    cluster_id: int
    user_id: Optional[str]  # 全局聚类模式下为 None
    centroid_lat: float
    centroid_lon: float
    member_count: int


@dataclass(frozen=True, slots=True)
class SampleAssignment:
    user_id: str
    timestamp: int
    cluster_id: Optional[int]


@dataclass(frozen=True)
class Visit:
    user_id: str
    cluster_id: int
    enter_ts: int
    exit_ts: int

    @property
    def duration(self) -> int:
        return self.exit_ts - self.enter_ts


class _ClusterAccumulator:
    """以坐标和/计数维护的簇 (质心 = 成员坐标均值)"""

    __slots__ = ("cluster_id", "user_id", "sum_lat", "sum_lon", "count")

    def __init__(self, cluster_id: int, user_id: Optional[str], lat: float, lon: float):
        self.cluster_id = cluster_id
        self.user_id = user_id
        self.sum_lat = lat
        self.sum_lon = lon
        self.count = 1

    @property
    def centroid(self) -> Tuple[float, float]:
        return self.sum_lat / self.count, self.sum_lon / self.count

    def add(self, lat: float, lon: float):
        self.sum_lat += lat
        self.sum_lon += lon
        self.count += 1

    def freeze(self) -> LocationCluster:
        lat, lon = self.centroid
        return LocationCluster(self.cluster_id, self.user_id, lat, lon, self.count)


def haversine_m(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    """
    球面大圆距离 (米)

    Args:
        a, b: (纬度, 经度) 度

    Returns:
        距离 (米)
    """
    lat1, lon1 = a
    lat2, lon2 = b
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    d_phi = math.radians(lat2 - lat1)
    d_lambda = math.radians(lon2 - lon1)

    h = math.sin(d_phi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(d_lambda / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.atan2(math.sqrt(h), math.sqrt(1 - h))


def moving_flags(
    samples: Sequence[GpsSample],
    activity: Sequence[ActivitySample],
    cfg: ClusterConfig,
) -> List[bool]:
    """
    判断每个 GPS 样本采集时用户是否在移动

    取时间上最近的活动样本 (等距取较早者), 若在 moving_window_s 之内,
    walking / running 即视为移动; 窗口内没有活动样本时, 退化为与上一个
    GPS 样本之间的隐含速度是否超过 speed_threshold_mps。
    """
    act_ts = [a.timestamp for a in activity]
    flags = []
    prev = None
    for sample in samples:
        moving = None
        if act_ts:
            idx = bisect_left(act_ts, sample.timestamp)
            best = None
            for j in (idx - 1, idx):
                if 0 <= j < len(act_ts):
                    gap = abs(act_ts[j] - sample.timestamp)
                    if best is None or gap < best[0]:
                        best = (gap, j)
            if best is not None and best[0] <= cfg.moving_window_s:
                moving = activity[best[1]].activity_class in MOVING_CLASSES

        if moving is None:
            moving = False
            if prev is not None and sample.timestamp > prev.timestamp:
                dist = haversine_m((prev.latitude, prev.longitude), (sample.latitude, sample.longitude))
                moving = dist / (sample.timestamp - prev.timestamp) > cfg.speed_threshold_mps

        flags.append(moving)
        prev = sample
    return flags


def _assign(
    sample: GpsSample,
    clusters: List[_ClusterAccumulator],
    radius_m: float,
) -> Optional[_ClusterAccumulator]:
    """按 cluster_id 升序找第一个质心在 radius_m 之内的簇"""
    point = (sample.latitude, sample.longitude)
    for cluster in clusters:
        if haversine_m(cluster.centroid, point) <= radius_m:
            return cluster
    return None


def cluster_locations(
    samples: Dict[str, List[GpsSample]],
    activity: Dict[str, List[ActivitySample]],
    cfg: Optional[ClusterConfig] = None,
) -> Tuple[List[LocationCluster], Dict[str, List[SampleAssignment]]]:
    """
    顺序式位置聚类

    精度超过 accuracy_max_m 或移动中采集的样本不参与聚类;
    其余样本加入首个质心距离不超过 radius_m 的簇并更新质心, 否则新建簇。

    Args:
        samples: 每个用户按时间排序的 GPS 样本
        activity: 每个用户按时间排序的活动样本
        cfg: 聚类配置

    Returns:
        (簇列表, 每个用户逐样本的簇分配)
    """
    cfg = cfg or ClusterConfig()
    all_clusters: List[_ClusterAccumulator] = []
    shared: List[_ClusterAccumulator] = []
    assignment: Dict[str, List[SampleAssignment]] = {}
    next_id = 0

    for user_id in sorted(samples):
        user_samples = samples[user_id]
        flags = moving_flags(user_samples, activity.get(user_id, []), cfg)
        clusters = shared if not cfg.per_user else []
        assigned = []

        for sample, moving in zip(user_samples, flags):
            if sample.accuracy > cfg.accuracy_max_m or moving:
                assigned.append(SampleAssignment(user_id, sample.timestamp, None))
                continue

            cluster = _assign(sample, clusters, cfg.radius_m)
            if cluster is None:
                cluster = _ClusterAccumulator(
                    next_id, user_id if cfg.per_user else None, sample.latitude, sample.longitude
                )
                next_id += 1
                clusters.append(cluster)
                all_clusters.append(cluster)
            else:
                cluster.add(sample.latitude, sample.longitude)
            assigned.append(SampleAssignment(user_id, sample.timestamp, cluster.cluster_id))

        assignment[user_id] = assigned
        logger.debug(f"用户 {user_id}: 样本={len(user_samples)}, 累计簇={len(all_clusters)}")

    result = [c.freeze() for c in all_clusters]
    n_assigned = sum(1 for rows in assignment.values() for a in rows if a.cluster_id is not None)
    logger.info(f"位置聚类完成: 簇={len(result)}, 已分配样本={n_assigned}")
    return result, assignment


def derive_visits(
    assignment: Dict[str, List[SampleAssignment]],
    cfg: Optional[ClusterConfig] = None,
) -> List[Visit]:
    """
    由簇分配推导停留

    同一用户连续分配到同一簇且间隔不超过 max_gap_s 的样本合并为一次停留,
    停留跨度为首尾样本时间; 超过间隔或簇变化则结束当前停留。
    跨度为 0 的停留 (单个样本) 被丢弃, 输出的停留都满足 exit_ts > enter_ts。
    未分配的样本被跳过。

    Returns:
        按用户、时间排序的停留列表
    """
    cfg = cfg or ClusterConfig()
    visits: List[Visit] = []

    def close(user_id: str, current: Tuple[int, int, int]):
        if current[2] > current[1]:
            visits.append(Visit(user_id, current[0], current[1], current[2]))

    for user_id in sorted(assignment):
        current = None  # (cluster_id, enter_ts, last_ts)
        for row in assignment[user_id]:
            if row.cluster_id is None:
                continue
            if (current is not None and row.cluster_id == current[0]
                    and row.timestamp - current[2] <= cfg.max_gap_s):
                current = (current[0], current[1], row.timestamp)
                continue
            if current is not None:
                close(user_id, current)
            current = (row.cluster_id, row.timestamp, row.timestamp)
        if current is not None:
            close(user_id, current)

    logger.info(f"停留推导完成: 停留={len(visits)}")
    return visits


# ==================== 导出 / 读回 ====================

def clusters_frame(clusters: List[LocationCluster]) -> pd.DataFrame:
    return pd.DataFrame(
        [(c.cluster_id, c.user_id if c.user_id is not None else "", c.centroid_lat,
          c.centroid_lon, c.member_count) for c in clusters],
        columns=["cluster_id", "user_id", "centroid_lat", "centroid_lon", "member_count"],
    )


def clusters_from_frame(df: pd.DataFrame) -> List[LocationCluster]:
    return [
        LocationCluster(int(r.cluster_id), str(r.user_id) if str(r.user_id) not in ("", "nan") else None,
                        float(r.centroid_lat), float(r.centroid_lon), int(r.member_count))
        for r in df.itertuples(index=False)
    ]


def visits_frame(visits: List[Visit]) -> pd.DataFrame:
    return pd.DataFrame(
        [(v.user_id, v.cluster_id, v.enter_ts, v.exit_ts) for v in visits],
        columns=["user_id", "cluster_id", "enter_ts", "exit_ts"],
    )


def visits_from_frame(df: pd.DataFrame) -> List[Visit]:
    return [
        Visit(str(r.user_id), int(r.cluster_id), int(r.enter_ts), int(r.exit_ts))
        for r in df.itertuples(index=False)
    ]
