# -*- coding: utf-8 -*-
"""
地点语义标注模块
为每个位置簇赋予唯一标签: 住所 / 工作-大学 / 健身-运动场所 / 社交场所 / 其他。

POI 查询采用策略模式:
- PlaceLookup: 抽象接口, 定义 nearest_poi
- CsvPoiLookup: 基于离线 poi.csv 的暴力最近邻实现
"""
import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from datetime import datetime, time, timedelta, tzinfo
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd

from .errors import DatasetError, NoHomeError
from .geocluster import LocationCluster, Visit, haversine_m
from .ingest import local_date

logger = logging.getLogger(__name__)


class PlaceLabel(Enum):
    """地点语义标签"""
    HOME = "home"
    WORK_UNIVERSITY = "work_university"
    GYM_SPORTS = "gym_sports"
    SOCIALIZATION_VENUE = "socialization_venue"
    OTHER = "other"


class PoiKeyword(Enum):
    """POI 类型关键词"""
    GYM = "gym"
    BAR = "bar"
    CAFE = "cafe"
    MOVIE_THEATER = "movie_theater"
    NIGHT_CLUB = "night_club"
    RESTAURANT = "restaurant"


SOCIAL_KEYWORDS = frozenset({
    PoiKeyword.BAR, PoiKeyword.CAFE, PoiKeyword.MOVIE_THEATER,
    PoiKeyword.NIGHT_CLUB, PoiKeyword.RESTAURANT,
})


@dataclass(frozen=True)
class PoiRecord:
    name: str
    latitude: float
    longitude: float
    keyword: PoiKeyword


@dataclass
class LabelConfig:
    """标注配置"""
    night_start: time = time(22, 0)
    night_end: time = time(7, 0)
    poi_radius_m: float = 50.0

    @classmethod
    def from_dict(cls, config: Optional[Dict]) -> "LabelConfig":
        config = config or {}
        return cls(
            night_start=_parse_clock(config.get('night_start', "22:00")),
            night_end=_parse_clock(config.get('night_end', "07:00")),
            poi_radius_m=float(config.get('poi_radius_m', 50.0)),
        )


def _parse_clock(value: Union[str, time]) -> time:
    if isinstance(value, time):
        return value
    hours, minutes = str(value).split(":")
    return time(int(hours), int(minutes))


# ==================== 校园边界 ====================

def _segments_cross(p1, p2, q1, q2) -> bool:
    """两条线段是否严格相交 (端点相接不算)"""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


class CampusBoundary:
    """校园多边形 (闭合环, 顶点为 (纬度, 经度))"""

    def __init__(self, polygon: Sequence[Tuple[float, float]]):
        vertices = [(float(lat), float(lon)) for lat, lon in polygon]
        if len(vertices) > 1 and vertices[0] == vertices[-1]:
            vertices = vertices[:-1]
        if len(vertices) < 3:
            raise DatasetError("校园边界至少需要 3 个顶点", stage="placesem")

        n = len(vertices)
        edges = [(vertices[i], vertices[(i + 1) % n]) for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                # 相邻边共享端点, 不检查
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(*edges[i], *edges[j]):
                    raise DatasetError("校园边界自相交", stage="placesem")

        self.polygon = vertices

    def contains(self, lat: float, lon: float) -> bool:
        """射线法判断点是否在多边形内 (经度为 x, 纬度为 y)"""
        inside = False
        n = len(self.polygon)
        for i in range(n):
            y1, x1 = self.polygon[i]
            y2, x2 = self.polygon[(i + 1) % n]
            if (y1 > lat) != (y2 > lat):
                x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
                if lon < x_cross:
                    inside = not inside
        return inside


def load_campus(path: Union[str, Path]) -> CampusBoundary:
    """读取 campus.geojsonl 的第一条闭合环"""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{path.name} missing", stage="placesem")
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                ring = json.loads(line)
                return CampusBoundary([(p[0], p[1]) for p in ring])
            except (ValueError, TypeError, IndexError) as e:
                raise DatasetError(f"{path.name} 第 {line_no} 行: 无法解析多边形 ({e})",
                                   stage="placesem") from e
    raise DatasetError(f"{path.name}: 文件为空", stage="placesem")


# ==================== POI 查询 ====================

class PlaceLookup(ABC):
    """
    POI 查询接口

    实现必须可被多线程安全调用, 且对固定数据库给出确定结果。
    """

    @abstractmethod
    def nearest_poi(self, lat: float, lon: float, radius_m: float) -> Optional[PoiRecord]:
        """返回距离严格小于 radius_m 的最近 POI (等距时取名称字典序较小者)"""
        pass


class CsvPoiLookup(PlaceLookup):
    """基于离线 POI 列表的暴力最近邻查询"""

    def __init__(self, records: Iterable[PoiRecord]):
        # 构造后只读
        self.records = tuple(sorted(records, key=lambda r: r.name))
        logger.info(f"POI 库加载完成: {len(self.records)} 条")

    def nearest_poi(self, lat: float, lon: float, radius_m: float) -> Optional[PoiRecord]:
        best = None
        for record in self.records:
            dist = haversine_m((lat, lon), (record.latitude, record.longitude))
            if dist >= radius_m:
                continue
            key = (dist, record.name)
            if best is None or key < best[0]:
                best = (key, record)
        return best[1] if best else None


def load_poi(path: Union[str, Path]) -> CsvPoiLookup:
    """读取 poi.csv: name,lat,lon,keyword"""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{path.name} missing", stage="placesem")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    missing = [c for c in ("name", "lat", "lon", "keyword") if c not in df.columns]
    if missing:
        raise DatasetError(f"{path.name}: 缺少列 {missing}", stage="placesem")

    allowed = {k.value for k in PoiKeyword}
    records = []
    for idx, row in enumerate(df.itertuples(index=False)):
        if row.keyword.strip() not in allowed:
            raise DatasetError(f"{path.name} 第 {idx + 2} 行: 未知 POI 类型 {row.keyword!r}",
                               stage="placesem")
        try:
            records.append(PoiRecord(row.name, float(row.lat), float(row.lon),
                                     PoiKeyword(row.keyword.strip())))
        except ValueError as e:
            raise DatasetError(f"{path.name} 第 {idx + 2} 行: 坐标非法", stage="placesem") from e
    return CsvPoiLookup(records)


# ==================== 标注 ====================

def _night_windows(enter_ts: int, exit_ts: int, zone: tzinfo, cfg: LabelConfig):
    """覆盖 [enter_ts, exit_ts] 的每个夜间窗口 (本地时间) 的 UTC 时间戳区间"""
    first = local_date(enter_ts, zone) - timedelta(days=1)
    last = local_date(exit_ts, zone)
    crosses_midnight = cfg.night_end <= cfg.night_start
    day = first
    while day <= last:
        start = datetime.combine(day, cfg.night_start, tzinfo=zone).timestamp()
        end_day = day + timedelta(days=1) if crosses_midnight else day
        end = datetime.combine(end_day, cfg.night_end, tzinfo=zone).timestamp()
        yield start, end
        day += timedelta(days=1)


def night_seconds(visit: Visit, zone: tzinfo, cfg: LabelConfig) -> float:
    """一次停留与夜间窗口的交叠时长 (秒)"""
    total = 0.0
    for start, end in _night_windows(visit.enter_ts, visit.exit_ts, zone, cfg):
        total += max(0.0, min(visit.exit_ts, end) - max(visit.enter_ts, start))
    return total


def label_home(
    visits: Sequence[Visit],
    clusters: Sequence[LocationCluster],
    zone: tzinfo,
    cfg: Optional[LabelConfig] = None,
) -> int:
    """
    识别住所: 整个研究期间夜间停留总时长最大的簇

    Args:
        visits: 该用户的停留
        clusters: 该用户可见的簇
        zone: 研究时区
        cfg: 标注配置

    Returns:
        住所簇 ID (并列时取较小 ID)

    Raises:
        NoHomeError: 没有任何夜间停留
    """
    cfg = cfg or LabelConfig()
    candidate_ids = {c.cluster_id for c in clusters}
    night: Dict[int, float] = {}
    for visit in visits:
        if visit.cluster_id not in candidate_ids:
            continue
        seconds = night_seconds(visit, zone, cfg)
        if seconds > 0:
            night[visit.cluster_id] = night.get(visit.cluster_id, 0.0) + seconds

    if not night:
        user = visits[0].user_id if visits else "?"
        raise NoHomeError(f"用户 {user} 没有夜间停留, 无法识别住所")

    return min(night, key=lambda cid: (-night[cid], cid))


def label_clusters(
    clusters: Sequence[LocationCluster],
    home_id: int,
    lookup: PlaceLookup,
    campus: Optional[CampusBoundary],
    cfg: Optional[LabelConfig] = None,
) -> Dict[int, PlaceLabel]:
    """
    为每个簇赋予唯一标签

    住所之外的簇: 最近 POI (距离小于 poi_radius_m) 为 gym 则为健身场所,
    为社交类关键词则为社交场所; 否则质心在校园内为工作/大学, 其余为其他。
    """
    cfg = cfg or LabelConfig()
    labels: Dict[int, PlaceLabel] = {}
    for cluster in clusters:
        if cluster.cluster_id == home_id:
            labels[cluster.cluster_id] = PlaceLabel.HOME
            continue

        poi = lookup.nearest_poi(cluster.centroid_lat, cluster.centroid_lon, cfg.poi_radius_m)
        if poi is not None and poi.keyword == PoiKeyword.GYM:
            label = PlaceLabel.GYM_SPORTS
        elif poi is not None and poi.keyword in SOCIAL_KEYWORDS:
            label = PlaceLabel.SOCIALIZATION_VENUE
        elif campus is not None and campus.contains(cluster.centroid_lat, cluster.centroid_lon):
            label = PlaceLabel.WORK_UNIVERSITY
        else:
            label = PlaceLabel.OTHER
        labels[cluster.cluster_id] = label
    return labels


def label_users(
    clusters: Sequence[LocationCluster],
    visits: Sequence[Visit],
    users: Sequence[str],
    zone: tzinfo,
    lookup: PlaceLookup,
    campus: Optional[CampusBoundary],
    cfg: Optional[LabelConfig] = None,
) -> Tuple[Dict[str, Dict[int, PlaceLabel]], List[str]]:
    """
    逐用户识别住所并标注其访问过的簇

    Returns:
        ({user_id: {cluster_id: label}}, 无法识别住所的用户列表)
    """
    cfg = cfg or LabelConfig()
    visits_by_user: Dict[str, List[Visit]] = {}
    for visit in visits:
        visits_by_user.setdefault(visit.user_id, []).append(visit)
    cluster_by_id = {c.cluster_id: c for c in clusters}

    labels: Dict[str, Dict[int, PlaceLabel]] = {}
    no_home: List[str] = []
    for user_id in users:
        user_visits = visits_by_user.get(user_id, [])
        visited = sorted({v.cluster_id for v in user_visits})
        user_clusters = [cluster_by_id[cid] for cid in visited if cid in cluster_by_id]
        try:
            home_id = label_home(user_visits, user_clusters, zone, cfg)
        except NoHomeError as e:
            logger.warning(f"{e}, 该用户的研究单元将被排除")
            no_home.append(user_id)
            continue
        labels[user_id] = label_clusters(user_clusters, home_id, lookup, campus, cfg)

    logger.info(f"地点标注完成: 用户={len(labels)}, 无住所={len(no_home)}")
    return labels, no_home


def labels_frame(labels: Dict[str, Dict[int, PlaceLabel]]) -> pd.DataFrame:
    return pd.DataFrame(
        [(uid, cid, label.value) for uid in sorted(labels) for cid, label in sorted(labels[uid].items())],
        columns=["user_id", "cluster_id", "label"],
    )


def labels_from_frame(df: pd.DataFrame) -> Dict[str, Dict[int, PlaceLabel]]:
    labels: Dict[str, Dict[int, PlaceLabel]] = {}
    for r in df.itertuples(index=False):
        labels.setdefault(str(r.user_id), {})[int(r.cluster_id)] = PlaceLabel(r.label)
    return labels
