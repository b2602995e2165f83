# -*- coding: utf-8 -*-
"""
数据接入模块
解析并校验五个输入数据流 (GPS / 活动 / 压力自评 / 截止日期 / 大五人格),
生成按用户组织、按时间排序的内存数据集。
"""
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, tzinfo
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Union

import numpy as np
import pandas as pd
from dateutil import tz as dateutil_tz

from .errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)

# === 输入文件及列定义 ===
GPS_FILE = "gps.csv"
ACTIVITY_FILE = "activity.csv"
STRESS_FILE = "stress.csv"
DEADLINES_FILE = "deadlines.csv"
PERSONALITY_FILE = "personality.csv"

GPS_COLUMNS = ["user_id", "timestamp", "lat", "lon", "accuracy_m"]
ACTIVITY_COLUMNS = ["user_id", "timestamp", "activity"]
STRESS_COLUMNS = ["user_id", "timestamp", "level"]
DEADLINE_COLUMNS = ["user_id", "date"]
TRAITS = ["extroversion", "neuroticism", "agreeableness", "conscientiousness", "openness"]
PERSONALITY_COLUMNS = ["user_id"] + TRAITS


class ActivityClass(Enum):
    """活动识别类别"""
    STATIONARY = "stationary"
    WALKING = "walking"
    RUNNING = "running"
    UNKNOWN = "unknown"


@dataclass(frozen=True, slots=True)
class GpsSample:
    user_id: str
    timestamp: int
    latitude: float
    longitude: float
    accuracy: float


@dataclass(frozen=True, slots=True)
class ActivitySample:
    user_id: str
    timestamp: int
    activity_class: ActivityClass


@dataclass(frozen=True, slots=True)
class StressReport:
    user_id: str
    timestamp: int
    level: float


@dataclass(frozen=True)
class DeadlineCalendar:
    user_id: str
    deadline_days: FrozenSet[date]


@dataclass(frozen=True)
class PersonalityScores:
    user_id: str
    extroversion: float
    neuroticism: float
    agreeableness: float
    conscientiousness: float
    openness: float

    def trait(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class RawDataset:
    """按用户组织的原始数据集"""
    users: List[str]
    gps: Dict[str, List[GpsSample]]
    activity: Dict[str, List[ActivitySample]]
    stress: Dict[str, List[StressReport]]
    deadlines: Dict[str, DeadlineCalendar]
    personality: Dict[str, PersonalityScores]
    timezone: str
    excluded: List[str] = field(default_factory=list)

    @property
    def tz(self) -> tzinfo:
        return resolve_timezone(self.timezone)

    @property
    def active_users(self) -> List[str]:
        excluded = set(self.excluded)
        return [u for u in self.users if u not in excluded]


@dataclass
class UserCoverage:
    """单个用户的数据覆盖情况"""
    user_id: str
    n_gps: int
    n_activity: int
    n_stress: int
    n_deadlines: int
    has_personality: bool
    study_days: int
    stress_days: int
    coverage: float
    gap_days: int


@dataclass
class ValidationReport:
    users: List[UserCoverage]
    excluded_users: List[str]
    users_without_personality: List[str]

    def to_dict(self) -> Dict:
        return {
            "n_users": len(self.users),
            "excluded_users": list(self.excluded_users),
            "users_without_personality": list(self.users_without_personality),
            "users": [vars(u).copy() for u in self.users],
        }


def resolve_timezone(name: str) -> tzinfo:
    """解析 IANA 时区名"""
    zone = dateutil_tz.gettz(name) if name else None
    if zone is None:
        raise ConfigError(f"未知时区: {name!r}")
    return zone


def local_date(timestamp: float, zone: tzinfo) -> date:
    """UTC 时间戳对应的本地日期"""
    return datetime.fromtimestamp(timestamp, zone).date()


# ==================== 读取 ====================

def _read_table(root: Path, name: str, columns: List[str]) -> pd.DataFrame:
    path = root / name
    if not path.is_file():
        raise DatasetError(f"{name} missing")

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.ParserError as e:
        raise DatasetError(f"{name}: 格式错误 ({e})") from e
    except pd.errors.EmptyDataError as e:
        raise DatasetError(f"{name}: 缺少表头行") from e
    except UnicodeDecodeError as e:
        raise DatasetError(f"{name}: 非 UTF-8 编码") from e

    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DatasetError(f"{name}: 缺少列 {missing}")

    df = df[columns].copy()
    for col in columns:
        df[col] = df[col].str.strip()

    empty_ids = df.index[df["user_id"] == ""]
    if len(empty_ids):
        raise DatasetError(f"{name} 第 {empty_ids[0] + 2} 行: user_id 为空")
    return df


def _fail_first(name: str, df: pd.DataFrame, mask: pd.Series, message: str):
    """mask 中第一个为 True 的行报错 (行号含表头)"""
    if mask.any():
        idx = int(np.flatnonzero(mask.to_numpy())[0])
        row = ",".join(df.iloc[idx].astype(str))
        raise DatasetError(f"{name} 第 {idx + 2} 行: {message} ({row})")


def _numeric(name: str, df: pd.DataFrame, col: str, integer: bool = False) -> pd.Series:
    values = pd.to_numeric(df[col], errors='coerce')
    bad = values.isna() | ~np.isfinite(values.fillna(0.0))
    _fail_first(name, df, bad, f"字段 {col} 不是有效数值")
    if integer:
        _fail_first(name, df, values != np.floor(values), f"字段 {col} 必须是整数秒")
        return values.astype(np.int64)
    return values.astype(float)


def _check_duplicates(name: str, df: pd.DataFrame, keys: List[str]):
    _fail_first(name, df, df.duplicated(keys, keep='first'), f"重复记录 {keys}")


def _sorted(df: pd.DataFrame) -> pd.DataFrame:
    return df.sort_values(["user_id", "timestamp"], kind="mergesort").reset_index(drop=True)


def _load_gps(root: Path) -> pd.DataFrame:
    df = _read_table(root, GPS_FILE, GPS_COLUMNS)
    df["timestamp"] = _numeric(GPS_FILE, df, "timestamp", integer=True)
    for col in ("lat", "lon", "accuracy_m"):
        df[col] = _numeric(GPS_FILE, df, col)
    _fail_first(GPS_FILE, df, (df["lat"] < -90) | (df["lat"] > 90), "纬度超出 [-90, 90]")
    _fail_first(GPS_FILE, df, (df["lon"] < -180) | (df["lon"] > 180), "经度超出 [-180, 180]")
    _fail_first(GPS_FILE, df, df["accuracy_m"] <= 0, "精度必须大于 0")
    _check_duplicates(GPS_FILE, df, ["user_id", "timestamp"])
    return _sorted(df)


def _load_activity(root: Path) -> pd.DataFrame:
    df = _read_table(root, ACTIVITY_FILE, ACTIVITY_COLUMNS)
    df["timestamp"] = _numeric(ACTIVITY_FILE, df, "timestamp", integer=True)
    allowed = {c.value for c in ActivityClass}
    _fail_first(ACTIVITY_FILE, df, ~df["activity"].isin(allowed), "未知活动类别")
    _check_duplicates(ACTIVITY_FILE, df, ["user_id", "timestamp"])
    return _sorted(df)


def _load_stress(root: Path) -> pd.DataFrame:
    df = _read_table(root, STRESS_FILE, STRESS_COLUMNS)
    df["timestamp"] = _numeric(STRESS_FILE, df, "timestamp", integer=True)
    df["level"] = _numeric(STRESS_FILE, df, "level")
    _check_duplicates(STRESS_FILE, df, ["user_id", "timestamp"])
    return _sorted(df)


def _load_deadlines(root: Path) -> pd.DataFrame:
    df = _read_table(root, DEADLINES_FILE, DEADLINE_COLUMNS)
    parsed = pd.to_datetime(df["date"], format="%Y-%m-%d", errors='coerce')
    _fail_first(DEADLINES_FILE, df, parsed.isna(), "日期格式应为 YYYY-MM-DD")
    df["date"] = parsed.dt.date
    _check_duplicates(DEADLINES_FILE, df, ["user_id", "date"])
    return df


def _load_personality(root: Path) -> pd.DataFrame:
    df = _read_table(root, PERSONALITY_FILE, PERSONALITY_COLUMNS)
    for col in TRAITS:
        df[col] = _numeric(PERSONALITY_FILE, df, col)
    _check_duplicates(PERSONALITY_FILE, df, ["user_id"])
    return df


def load_dataset(root_path: Union[str, Path], timezone: str) -> RawDataset:
    """
    加载并校验数据集

    Args:
        root_path: 包含五个 CSV 文件的目录
        timezone: 研究所在时区 (IANA 名称)

    Returns:
        校验后的 RawDataset, 每个用户的数据流按时间排序
    """
    resolve_timezone(timezone)
    root = Path(root_path)

    gps_df = _load_gps(root)
    activity_df = _load_activity(root)
    stress_df = _load_stress(root)
    deadline_df = _load_deadlines(root)
    personality_df = _load_personality(root)

    gps = {
        uid: [GpsSample(uid, int(r.timestamp), float(r.lat), float(r.lon), float(r.accuracy_m))
              for r in grp.itertuples(index=False)]
        for uid, grp in gps_df.groupby("user_id", sort=True)
    }
    activity = {
        uid: [ActivitySample(uid, int(r.timestamp), ActivityClass(r.activity))
              for r in grp.itertuples(index=False)]
        for uid, grp in activity_df.groupby("user_id", sort=True)
    }
    stress = {
        uid: [StressReport(uid, int(r.timestamp), float(r.level)) for r in grp.itertuples(index=False)]
        for uid, grp in stress_df.groupby("user_id", sort=True)
    }
    deadlines = {
        uid: DeadlineCalendar(uid, frozenset(grp["date"]))
        for uid, grp in deadline_df.groupby("user_id", sort=True)
    }
    personality = {
        r.user_id: PersonalityScores(r.user_id, *(float(getattr(r, t)) for t in TRAITS))
        for r in personality_df.itertuples(index=False)
    }

    users = sorted(set(gps) | set(activity) | set(stress) | set(deadlines) | set(personality))
    excluded = [u for u in users if not gps.get(u) or not stress.get(u)]
    for uid in excluded:
        logger.warning(f"用户 {uid} 缺少 GPS 或压力自评数据, 已排除")

    ds = RawDataset(
        users=users,
        gps=gps,
        activity=activity,
        stress=stress,
        deadlines=deadlines,
        personality=personality,
        timezone=timezone,
        excluded=excluded,
    )
    logger.info(f"数据集加载完成: 用户={len(users)}, GPS={len(gps_df)}, 活动={len(activity_df)}, "
                f"压力={len(stress_df)}, 排除={len(excluded)}")
    return ds


def write_dataset(ds: RawDataset, root_path: Union[str, Path]) -> Path:
    """
    将数据集写回五个 CSV 文件 (load_dataset 的逆操作)

    Args:
        ds: 数据集
        root_path: 输出目录

    Returns:
        输出目录
    """
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)

    def rows(stream):
        return [s for uid in sorted(stream) for s in stream[uid]]

    pd.DataFrame(
        [(s.user_id, s.timestamp, s.latitude, s.longitude, s.accuracy) for s in rows(ds.gps)],
        columns=GPS_COLUMNS,
    ).to_csv(root / GPS_FILE, index=False)
    pd.DataFrame(
        [(s.user_id, s.timestamp, s.activity_class.value) for s in rows(ds.activity)],
        columns=ACTIVITY_COLUMNS,
    ).to_csv(root / ACTIVITY_FILE, index=False)
    pd.DataFrame(
        [(s.user_id, s.timestamp, s.level) for s in rows(ds.stress)],
        columns=STRESS_COLUMNS,
    ).to_csv(root / STRESS_FILE, index=False)
    pd.DataFrame(
        [(uid, d.isoformat()) for uid in sorted(ds.deadlines)
         for d in sorted(ds.deadlines[uid].deadline_days)],
        columns=DEADLINE_COLUMNS,
    ).to_csv(root / DEADLINES_FILE, index=False)
    pd.DataFrame(
        [(uid, *(ds.personality[uid].trait(t) for t in TRAITS)) for uid in sorted(ds.personality)],
        columns=PERSONALITY_COLUMNS,
    ).to_csv(root / PERSONALITY_FILE, index=False)

    logger.info(f"数据集已写出: {root}")
    return root


# ==================== 校验报告 ====================

def validate_dataset(ds: RawDataset) -> ValidationReport:
    """
    生成数据覆盖报告 (只报告, 不抛异常)

    coverage = 有压力自评的天数 / 研究天数,
    研究天数为该用户所有记录的本地日期跨度 (含首尾)。
    """
    zone = ds.tz
    coverages = []
    for uid in ds.users:
        timestamps = [s.timestamp for s in ds.gps.get(uid, [])]
        timestamps += [s.timestamp for s in ds.activity.get(uid, [])]
        timestamps += [s.timestamp for s in ds.stress.get(uid, [])]
        stress_days = {local_date(s.timestamp, zone) for s in ds.stress.get(uid, [])}

        if timestamps:
            first = local_date(min(timestamps), zone)
            last = local_date(max(timestamps), zone)
            study_days = (last - first).days + 1
        else:
            study_days = 0

        coverages.append(UserCoverage(
            user_id=uid,
            n_gps=len(ds.gps.get(uid, [])),
            n_activity=len(ds.activity.get(uid, [])),
            n_stress=len(ds.stress.get(uid, [])),
            n_deadlines=len(ds.deadlines[uid].deadline_days) if uid in ds.deadlines else 0,
            has_personality=uid in ds.personality,
            study_days=study_days,
            stress_days=len(stress_days),
            coverage=len(stress_days) / study_days if study_days else 0.0,
            gap_days=study_days - len(stress_days),
        ))

    report = ValidationReport(
        users=coverages,
        excluded_users=list(ds.excluded),
        users_without_personality=[u for u in ds.users if u not in ds.personality],
    )
    logger.info(f"数据校验完成: 用户={len(coverages)}, 排除={len(report.excluded_users)}")
    return report
