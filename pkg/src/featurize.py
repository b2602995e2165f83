# -*- coding: utf-8 -*-
"""
特征构建模块
在 4 小时采样网格上计算研究变量, 并组装研究单元 (用户, 日期, 采样时刻)。

变量说明:
- H / U / O: 截至采样时刻当天在住所 / 大学 / 其他地点的累计停留秒数
- E: 累计运动秒数 (健身场所停留 ∪ 跑步片段)
- SC: 累计社交场所停留秒数 (同时计入 O)
- S: [t_i, t_{i+1}) 内压力自评均值
- PS: 前一天最后一次压力自评
- D: 截止日期压力
"""
import logging
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, tzinfo
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd
from dateutil import tz as dateutil_tz

from .errors import ConfigError
from .geocluster import Visit
from .ingest import TRAITS, ActivityClass, ActivitySample, DeadlineCalendar, RawDataset, StressReport, local_date
from .placesem import PlaceLabel

logger = logging.getLogger(__name__)

STUDY_VARIABLES = ["S", "H", "U", "O", "E", "SC", "PS", "D"] + TRAITS

# units.csv 中人格列的短名
TRAIT_COLUMNS = {
    "extroversion": "extro",
    "neuroticism": "neuro",
    "agreeableness": "agree",
    "conscientiousness": "consc",
    "openness": "open",
}
UNIT_COLUMNS = ["user_id", "day", "t_index", "H", "U", "O", "E", "SC", "S", "PS", "D"] + list(TRAIT_COLUMNS.values())

OTHER_LABELS = (PlaceLabel.GYM_SPORTS, PlaceLabel.SOCIALIZATION_VENUE, PlaceLabel.OTHER)

Interval = Tuple[float, float]


class SamplingGrid:
    """
    一天内的采样时刻 (本地时钟的小时数, 24 表示当天结束)

    最后一个时刻的压力窗口延伸到次日第一个时刻。
    """

    def __init__(self, hours: Sequence[float] = (4, 8, 12, 16, 20, 24)):
        hours = [float(h) for h in hours]
        if not hours:
            raise ConfigError("采样网格不能为空")
        if any(b <= a for a, b in zip(hours, hours[1:])):
            raise ConfigError(f"采样时刻必须严格递增: {hours}")
        if hours[0] < 0 or hours[-1] > 24 or hours[-1] - hours[0] >= 24:
            raise ConfigError(f"采样时刻必须落在一天之内: {hours}")
        self.hours = hours

    def __len__(self) -> int:
        return len(self.hours)

    @staticmethod
    def _wall_clock(day: date, hour: float, zone: tzinfo) -> float:
        # 同一 tzinfo 下的加法按本地时钟计算, 夏令时切换日依然落在本地整点
        whole = int(hour // 24)
        base = datetime.combine(day + timedelta(days=whole), time(0), tzinfo=zone)
        return (base + timedelta(hours=hour - 24 * whole)).timestamp()

    def day_start(self, day: date, zone: tzinfo) -> float:
        return self._wall_clock(day, 0, zone)

    def instant(self, day: date, t_index: int, zone: tzinfo) -> float:
        """采样时刻 t_i 的 UTC 时间戳"""
        return self._wall_clock(day, self.hours[t_index], zone)

    def stress_window(self, day: date, t_index: int, zone: tzinfo) -> Interval:
        """[t_i, t_{i+1}) 的 UTC 时间戳区间"""
        start = self.instant(day, t_index, zone)
        if t_index + 1 < len(self.hours):
            end = self.instant(day, t_index + 1, zone)
        else:
            end = self._wall_clock(day, self.hours[0] + 24, zone)
        return start, end


DEFAULT_GRID = SamplingGrid()


@dataclass
class FeatureConfig:
    """特征配置"""
    T_days: int = 3
    exercise_merge_gap_s: int = 300
    min_exercise_bout_s: int = 300
    include_walking: bool = False

    def __post_init__(self):
        if self.T_days < 1:
            raise ConfigError(f"T_days 必须 >= 1, 当前 {self.T_days}")

    @classmethod
    def from_dict(cls, config: Optional[Dict]) -> "FeatureConfig":
        config = config or {}
        return cls(
            T_days=int(config.get('T_days', 3)),
            exercise_merge_gap_s=int(config.get('exercise_merge_gap_s', 300)),
            min_exercise_bout_s=int(config.get('min_exercise_bout_s', 300)),
            include_walking=bool(config.get('include_walking', False)),
        )


@dataclass
class Unit:
    """研究单元"""
    user_id: str
    day: date
    t_index: int
    H: float
    U: float
    O: float
    E: float
    SC: float
    S: float
    PS: float
    D: float
    extroversion: Optional[float] = None
    neuroticism: Optional[float] = None
    agreeableness: Optional[float] = None
    conscientiousness: Optional[float] = None
    openness: Optional[float] = None

    @property
    def key(self) -> str:
        return f"{self.user_id}|{self.day.isoformat()}|{self.t_index}"

    def value(self, name: str) -> Optional[float]:
        if name not in STUDY_VARIABLES:
            raise KeyError(f"未知变量: {name}")
        return getattr(self, name)


# ==================== 区间工具 ====================

def _clipped(start: float, end: float, lo: float, hi: float) -> float:
    return max(0.0, min(end, hi) - max(start, lo))


def _union_length(intervals: Iterable[Interval]) -> float:
    total = 0.0
    current = None
    for start, end in sorted(intervals):
        if end <= start:
            continue
        if current is None or start > current[1]:
            if current is not None:
                total += current[1] - current[0]
            current = [start, end]
        else:
            current[1] = max(current[1], end)
    if current is not None:
        total += current[1] - current[0]
    return total


def _user_visits(visits: Sequence[Visit], user: str) -> List[Visit]:
    return [v for v in visits if v.user_id == user]


def _label_seconds(
    visits: Sequence[Visit],
    labels: Dict[int, PlaceLabel],
    lo: float,
    hi: float,
) -> Dict[PlaceLabel, float]:
    totals = {label: 0.0 for label in PlaceLabel}
    for visit in visits:
        label = labels.get(visit.cluster_id)
        if label is None:
            continue
        totals[label] += _clipped(visit.enter_ts, visit.exit_ts, lo, hi)
    return totals


# ==================== 变量 ====================

def sojourn_seconds(
    visits: Sequence[Visit],
    labels: Dict[str, Dict[int, PlaceLabel]],
    user: str,
    day: date,
    t_index: int,
    grid: SamplingGrid = DEFAULT_GRID,
    zone: tzinfo = dateutil_tz.UTC,
) -> Tuple[float, float, float]:
    """
    [当天 00:00, t_i) 内住所 / 大学 / 其他地点的累计停留时长

    Returns:
        (H, U, O) 秒; O 包含健身、社交及其他标签的簇
    """
    lo, hi = grid.day_start(day, zone), grid.instant(day, t_index, zone)
    totals = _label_seconds(_user_visits(visits, user), labels.get(user, {}), lo, hi)
    other = sum(totals[label] for label in OTHER_LABELS)
    return totals[PlaceLabel.HOME], totals[PlaceLabel.WORK_UNIVERSITY], other


def social_seconds(
    visits: Sequence[Visit],
    labels: Dict[str, Dict[int, PlaceLabel]],
    user: str,
    day: date,
    t_index: int,
    grid: SamplingGrid = DEFAULT_GRID,
    zone: tzinfo = dateutil_tz.UTC,
) -> float:
    """[当天 00:00, t_i) 内社交场所的累计停留时长 (SC)"""
    lo, hi = grid.day_start(day, zone), grid.instant(day, t_index, zone)
    totals = _label_seconds(_user_visits(visits, user), labels.get(user, {}), lo, hi)
    return totals[PlaceLabel.SOCIALIZATION_VENUE]


def exercise_bouts(activity: Sequence[ActivitySample], cfg: FeatureConfig) -> List[Interval]:
    """
    从活动样本中提取运动片段

    连续的跑步样本 (间隔不超过 exercise_merge_gap_s) 合并为一个片段,
    跨度为首尾样本时间, 短于 min_exercise_bout_s 的片段被丢弃。
    其他类别的样本会打断片段。
    """
    classes = {ActivityClass.RUNNING}
    if cfg.include_walking:
        classes.add(ActivityClass.WALKING)

    bouts: List[Interval] = []
    current = None

    def close():
        if current is not None and current[1] - current[0] >= cfg.min_exercise_bout_s:
            bouts.append((float(current[0]), float(current[1])))

    for sample in activity:
        if sample.activity_class not in classes:
            close()
            current = None
            continue
        if current is not None and sample.timestamp - current[1] <= cfg.exercise_merge_gap_s:
            current = (current[0], sample.timestamp)
        else:
            close()
            current = (sample.timestamp, sample.timestamp)
    close()
    return bouts


def exercise_seconds(
    visits: Sequence[Visit],
    labels: Dict[str, Dict[int, PlaceLabel]],
    activity: Sequence[ActivitySample],
    user: str,
    day: date,
    t_index: int,
    cfg: Optional[FeatureConfig] = None,
    grid: SamplingGrid = DEFAULT_GRID,
    zone: tzinfo = dateutil_tz.UTC,
    bouts: Optional[List[Interval]] = None,
) -> float:
    """
    [当天 00:00, t_i) 内的运动时长 E

    健身场所停留与跑步片段取并集, 重叠部分只计一次。

    Args:
        bouts: 预先计算的运动片段 (为空时从 activity 计算)
    """
    cfg = cfg or FeatureConfig()
    lo, hi = grid.day_start(day, zone), grid.instant(day, t_index, zone)
    user_labels = labels.get(user, {})
    if bouts is None:
        bouts = exercise_bouts([a for a in activity if a.user_id == user], cfg)

    intervals = [
        (max(v.enter_ts, lo), min(v.exit_ts, hi))
        for v in _user_visits(visits, user)
        if user_labels.get(v.cluster_id) == PlaceLabel.GYM_SPORTS
    ]
    intervals.extend((max(s, lo), min(e, hi)) for s, e in bouts)
    return _union_length(intervals)


def deadline_pressure(calendar: Optional[DeadlineCalendar], day: date, T_days: int) -> float:
    """
    截止日期压力: D = Σ 1/(j − d), j 取满足 j − T_days < d < j 的截止日

    Args:
        calendar: 用户的截止日期表 (可为空)
        day: 当天
        T_days: 关注窗口天数

    Returns:
        D >= 0
    """
    if calendar is None:
        return 0.0
    total = 0.0
    for deadline in calendar.deadline_days:
        gap = (deadline - day).days
        if 0 < gap < T_days:
            total += 1.0 / gap
    return total


def aggregate_stress(
    reports: Sequence[StressReport],
    user: str,
    t_start: float,
    t_end: float,
) -> Optional[float]:
    """[t_start, t_end) 内压力自评的均值, 没有自评时返回 None"""
    stamps = [r.timestamp for r in reports]
    lo = bisect_left(stamps, t_start)
    hi = bisect_left(stamps, t_end)
    levels = [r.level for r in reports[lo:hi] if r.user_id == user]
    if not levels:
        return None
    return sum(levels) / len(levels)


# ==================== 组装 ====================

def _user_units(
    ds: RawDataset,
    user: str,
    visits: List[Visit],
    labels: Dict[str, Dict[int, PlaceLabel]],
    grid: SamplingGrid,
    cfg: FeatureConfig,
) -> List[Unit]:
    zone = ds.tz
    reports = ds.stress.get(user, [])
    if not reports:
        return []

    last_report: Dict[date, float] = {}
    for report in reports:
        last_report[local_date(report.timestamp, zone)] = report.level

    first_day = min(last_report)
    last_day = max(last_report)
    bouts = exercise_bouts(ds.activity.get(user, []), cfg)
    calendar = ds.deadlines.get(user)
    scores = ds.personality.get(user)
    traits = {t: (scores.trait(t) if scores else None) for t in TRAITS}

    units: List[Unit] = []
    day = first_day
    while day <= last_day:
        prev_stress = last_report.get(day - timedelta(days=1))
        if prev_stress is None:
            day += timedelta(days=1)
            continue

        day_lo = grid.day_start(day, zone)
        day_hi = grid.instant(day, len(grid) - 1, zone)
        day_visits = [v for v in visits if v.exit_ts >= day_lo and v.enter_ts < day_hi]
        pressure = deadline_pressure(calendar, day, cfg.T_days)

        for t_index in range(len(grid)):
            start, end = grid.stress_window(day, t_index, zone)
            stress = aggregate_stress(reports, user, start, end)
            if stress is None:
                continue
            h, u, o = sojourn_seconds(day_visits, labels, user, day, t_index, grid, zone)
            sc = social_seconds(day_visits, labels, user, day, t_index, grid, zone)
            e = exercise_seconds(day_visits, labels, [], user, day, t_index, cfg, grid, zone, bouts=bouts)
            units.append(Unit(user, day, t_index, h, u, o, e, sc, stress, prev_stress, pressure, **traits))
        day += timedelta(days=1)
    return units


def build_units(
    ds: RawDataset,
    visits: Sequence[Visit],
    labels: Dict[str, Dict[int, PlaceLabel]],
    grid: SamplingGrid = DEFAULT_GRID,
    cfg: Optional[FeatureConfig] = None,
    threads: int = 1,
) -> List[Unit]:
    """
    组装研究单元

    每个 (用户, 日期, t_i) 在压力窗口内有自评且前一天有自评时生成一个单元。
    没有住所标签的用户不产生单元。

    Args:
        ds: 数据集
        visits: 全部停留
        labels: 逐用户的簇标签
        grid: 采样网格
        cfg: 特征配置
        threads: 并行线程数

    Returns:
        按 (user_id, day, t_index) 排序的单元列表
    """
    cfg = cfg or FeatureConfig()
    by_user: Dict[str, List[Visit]] = {}
    for visit in visits:
        by_user.setdefault(visit.user_id, []).append(visit)

    users = [u for u in ds.active_users if u in labels]
    skipped = [u for u in ds.active_users if u not in labels]
    if skipped:
        logger.warning(f"{len(skipped)} 个用户没有地点标签, 不生成单元: {skipped}")

    def work(user: str) -> List[Unit]:
        return _user_units(ds, user, by_user.get(user, []), labels, grid, cfg)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        per_user = list(executor.map(work, users))

    units = [unit for chunk in per_user for unit in chunk]
    units.sort(key=lambda u: (u.user_id, u.day, u.t_index))
    logger.info(f"研究单元构建完成: 用户={len(users)}, 单元={len(units)}")
    return units


# ==================== 导出 / 读回 ====================

def units_frame(units: Sequence[Unit]) -> pd.DataFrame:
    rows = []
    for u in units:
        rows.append([u.user_id, u.day.isoformat(), u.t_index, u.H, u.U, u.O, u.E, u.SC, u.S, u.PS, u.D]
                    + [getattr(u, t) for t in TRAIT_COLUMNS])
    return pd.DataFrame(rows, columns=UNIT_COLUMNS)


def units_from_frame(df: pd.DataFrame) -> List[Unit]:
    def optional(value) -> Optional[float]:
        return None if pd.isna(value) else float(value)

    units = []
    for r in df.to_dict(orient="records"):
        units.append(Unit(
            user_id=str(r["user_id"]),
            day=date.fromisoformat(str(r["day"])),
            t_index=int(r["t_index"]),
            **{k: float(r[k]) for k in ("H", "U", "O", "E", "SC", "S", "PS", "D")},
            **{trait: optional(r[short]) for trait, short in TRAIT_COLUMNS.items()},
        ))
    return units
