# -*- coding: utf-8 -*-
"""
合成数据生成模块
生成已知因果结构的传感数据集 (与 ingest 读取的 CSV 格式完全一致), 用于端到端验证。

生成过程:
1. 地理布局: 校园 (两栋楼 + 正方形边界)、健身房、社交场所、其他地点、各用户住所
2. 每个用户每天的日程: 住所 → (晨跑) → 校园 → 其他 → 健身 → 社交 → 住所,
   校园停留时长与社交/健身概率受截止日期压力和人格特质驱动 (混杂)
3. 由真实停留计算处理变量, 在每个采样时刻分层内按处理规则确定处理组
4. 按时间顺序生成压力自评:
   基线 + 混杂效应 + 前一天压力 + true_ate × 是否处理 + 高斯噪声
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .design import DesignConfig, TreatmentKind, TreatmentRule, design_strata
from .errors import ConfigError, DegenerateDesignError
from .featurize import (DEFAULT_GRID, FeatureConfig, SamplingGrid, Unit, deadline_pressure, exercise_bouts,
                        exercise_seconds, social_seconds, sojourn_seconds)
from .geocluster import Visit
from .ingest import (TRAITS, ActivityClass, ActivitySample, DeadlineCalendar, GpsSample, PersonalityScores,
                     RawDataset, StressReport, local_date, resolve_timezone, write_dataset)
from .placesem import PlaceLabel, PoiKeyword, PoiRecord

logger = logging.getLogger(__name__)

POI_FILE = "poi.csv"
CAMPUS_FILE = "campus.geojsonl"
GROUND_TRUTH_FILE = "ground_truth.json"

METERS_PER_DEGREE = 111320.0
GPS_PERIOD_S = 900
TRAVEL_GPS_PERIOD_S = 300
ACTIVITY_PERIOD_S = 120
TRAVEL_SPEED_MPS = 3.0
MAX_JITTER_M = 8.0
DAY_S = 86400

VENUE_KEYWORDS = [PoiKeyword.CAFE, PoiKeyword.BAR, PoiKeyword.RESTAURANT, PoiKeyword.NIGHT_CLUB]


@dataclass
class SimConfig:
    """合成数据配置"""
    n_users: int = 60
    n_days: int = 70
    seed: int = 7
    true_ate: float = -0.5
    confounding_strength: float = 1.0
    noise_sd: float = 0.5
    timezone: str = "America/New_York"
    start_date: date = date(2013, 3, 25)
    center: Tuple[float, float] = (43.7022, -72.2896)
    report_rate: float = 0.35
    treatment: str = "U"
    treatment_kind: TreatmentKind = TreatmentKind.LOW_TAIL
    alpha: float = 0.0
    T_days: int = 3
    grid_hours: Tuple[float, ...] = (4, 8, 12, 16, 20, 24)

    def __post_init__(self):
        if self.n_users < 2:
            raise ConfigError(f"n_users 必须 >= 2, 当前 {self.n_users}")
        if self.n_days < 2:
            raise ConfigError(f"n_days 必须 >= 2, 当前 {self.n_days}")
        if not self.noise_sd > 0:
            raise ConfigError(f"noise_sd 必须 > 0, 当前 {self.noise_sd}")
        if not 0 < self.report_rate <= 1:
            raise ConfigError(f"report_rate 必须在 (0, 1] 内, 当前 {self.report_rate}")
        resolve_timezone(self.timezone)

    @property
    def rule(self) -> TreatmentRule:
        return TreatmentRule(self.treatment, self.treatment_kind, self.alpha)

    @classmethod
    def from_dict(cls, config: Optional[Dict]) -> "SimConfig":
        config = dict(config or {})
        integers = ('n_users', 'n_days', 'seed', 'T_days')
        for key in integers:
            if key in config and (not isinstance(config[key], int) or isinstance(config[key], bool)):
                raise ConfigError(f"{key} 必须是整数, 当前 {config[key]!r}")
        reals = ('true_ate', 'confounding_strength', 'noise_sd', 'report_rate', 'alpha')
        for key in reals:
            if key in config and (not isinstance(config[key], (int, float)) or isinstance(config[key], bool)):
                raise ConfigError(f"{key} 必须是数值, 当前 {config[key]!r}")
        try:
            start = date.fromisoformat(str(config.get('start_date', "2013-03-25")))
            kind = TreatmentKind(config.get('treatment_kind', "low_tail"))
        except ValueError as e:
            raise ConfigError(f"模拟配置非法: {e}") from e
        center = config.get('center', [43.7022, -72.2896])
        return cls(
            n_users=config.get('n_users', 60),
            n_days=config.get('n_days', 70),
            seed=config.get('seed', 7),
            true_ate=float(config.get('true_ate', -0.5)),
            confounding_strength=float(config.get('confounding_strength', 1.0)),
            noise_sd=float(config.get('noise_sd', 0.5)),
            timezone=config.get('timezone', "America/New_York"),
            start_date=start,
            center=(float(center[0]), float(center[1])),
            report_rate=float(config.get('report_rate', 0.35)),
            treatment=config.get('treatment', "U"),
            treatment_kind=kind,
            alpha=float(config.get('alpha', 0.0)),
            T_days=config.get('T_days', 3),
            grid_hours=tuple(config.get('grid_hours', (4, 8, 12, 16, 20, 24))),
        )


@dataclass
class Place:
    place_id: int
    kind: str
    latitude: float
    longitude: float
    label: PlaceLabel


@dataclass
class GroundTruth:
    """生成过程的真值"""
    true_ate: float
    naive_ate: Optional[float]
    treatment: str
    treatment_kind: str
    alpha: float
    confounding_strength: float
    seed: int
    n_units: int
    n_treated: int
    units: List[Dict] = field(default_factory=list)  # 每个单元的 y0 / y1 反事实

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class Simulation:
    dataset: RawDataset
    ground_truth: GroundTruth
    pois: List[PoiRecord]
    campus: List[Tuple[float, float]]
    places: List[Place]


# ==================== 地理布局 ====================

def _offset(origin: Tuple[float, float], east_m: float, north_m: float) -> Tuple[float, float]:
    lat, lon = origin
    return (lat + north_m / METERS_PER_DEGREE,
            lon + east_m / (METERS_PER_DEGREE * math.cos(math.radians(lat))))


def _ring(origin, radius_m: float, angle_deg: float) -> Tuple[float, float]:
    a = math.radians(angle_deg)
    return _offset(origin, radius_m * math.cos(a), radius_m * math.sin(a))


def build_geography(cfg: SimConfig) -> Tuple[List[Place], List[PoiRecord], List[Tuple[float, float]]]:
    """
    固定地理布局

    Returns:
        (地点列表, POI 列表, 校园多边形)
    """
    places: List[Place] = []

    def add(kind: str, point: Tuple[float, float], label: PlaceLabel) -> Place:
        place = Place(len(places), kind, point[0], point[1], label)
        places.append(place)
        return place

    for east in (-150.0, 150.0):
        add("campus", _offset(cfg.center, east, 0.0), PlaceLabel.WORK_UNIVERSITY)
    pois = []
    for i, angle in enumerate((0.0, 180.0)):
        gym = add("gym", _ring(cfg.center, 800.0, angle), PlaceLabel.GYM_SPORTS)
        pois.append(PoiRecord(f"gym_{i}", gym.latitude, gym.longitude, PoiKeyword.GYM))
    for i, angle in enumerate((60.0, 120.0, 240.0, 300.0)):
        venue = add("venue", _ring(cfg.center, 800.0, angle), PlaceLabel.SOCIALIZATION_VENUE)
        keyword = VENUE_KEYWORDS[i % len(VENUE_KEYWORDS)]
        pois.append(PoiRecord(f"{keyword.value}_{i}", venue.latitude, venue.longitude, keyword))
    for i in range(8):
        add("other", _ring(cfg.center, 1500.0, 22.5 + 45.0 * i), PlaceLabel.OTHER)
    for i in range(cfg.n_users):
        add("home", _ring(cfg.center, 3000.0, 360.0 * i / cfg.n_users), PlaceLabel.HOME)

    half = 300.0
    campus = [_offset(cfg.center, e, n) for e, n in ((-half, -half), (half, -half), (half, half), (-half, half))]
    campus.append(campus[0])
    return places, pois, campus


# ==================== 日程 ====================

@dataclass
class _Latent:
    extroversion_z: float
    neuroticism_z: float


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _distance_m(a: Place, b: Place) -> float:
    dy = (b.latitude - a.latitude) * METERS_PER_DEGREE
    dx = (b.longitude - a.longitude) * METERS_PER_DEGREE * math.cos(math.radians(a.latitude))
    return math.hypot(dx, dy)


def _travel_s(a: Place, b: Place) -> int:
    return int(max(300.0, _distance_m(a, b) / TRAVEL_SPEED_MPS))


class _Trace:
    """单个用户的轨迹采样器"""

    def __init__(self, user_id: str, rng: np.random.Generator):
        self.user_id = user_id
        self.rng = rng
        self.gps: List[GpsSample] = []
        self.activity: List[ActivitySample] = []
        self.visits: List[Visit] = []

    def _jitter(self, place: Place) -> Tuple[float, float]:
        r = MAX_JITTER_M * math.sqrt(self.rng.random())
        a = 2 * math.pi * self.rng.random()
        return _offset((place.latitude, place.longitude), r * math.cos(a), r * math.sin(a))

    def stay(self, place: Place, start: int, end: int):
        times = sorted(set(range(start, end, GPS_PERIOD_S)) | {end})
        for k, ts in enumerate(times):
            lat, lon = self._jitter(place)
            interior = 0 < k < len(times) - 1
            accuracy = float(self.rng.uniform(60.0, 120.0)) if interior and self.rng.random() < 0.03 \
                else float(self.rng.uniform(5.0, 30.0))
            self.gps.append(GpsSample(self.user_id, ts, lat, lon, round(accuracy, 1)))
            self.activity.append(ActivitySample(self.user_id, ts, ActivityClass.STATIONARY))
        self.visits.append(Visit(self.user_id, place.place_id, start, end))

    def travel(self, origin: Place, target: Place, start: int, end: int):
        for ts in range(start + TRAVEL_GPS_PERIOD_S, end, TRAVEL_GPS_PERIOD_S):
            f = (ts - start) / (end - start)
            lat = origin.latitude + f * (target.latitude - origin.latitude)
            lon = origin.longitude + f * (target.longitude - origin.longitude)
            self.gps.append(GpsSample(self.user_id, ts, lat, lon, 15.0))
        for ts in range(start + 60, end, ACTIVITY_PERIOD_S):
            self.activity.append(ActivitySample(self.user_id, ts, ActivityClass.WALKING))

    def run(self, home: Place, start: int, end: int):
        for ts in range(start + TRAVEL_GPS_PERIOD_S, end, TRAVEL_GPS_PERIOD_S):
            angle = 2 * math.pi * (ts - start) / (end - start)
            lat, lon = _offset((home.latitude, home.longitude), 400.0 * math.sin(angle),
                               400.0 * (1 - math.cos(angle)))
            self.gps.append(GpsSample(self.user_id, ts, lat, lon, 10.0))
        for ts in range(start + 60, end, ACTIVITY_PERIOD_S):
            self.activity.append(ActivitySample(self.user_id, ts, ActivityClass.RUNNING))


def _simulate_user(
    cfg: SimConfig,
    idx: int,
    places: List[Place],
    course_deadlines: Sequence[date],
    day_starts: List[int],
) -> Tuple[_Trace, _Latent, DeadlineCalendar, PersonalityScores, List[int]]:
    """生成一个用户的轨迹、人格、截止日期与自评时刻"""
    user_id = f"u{idx:02d}"
    rng = np.random.default_rng([cfg.seed, idx])
    s = cfg.confounding_strength

    latent = _Latent(float(rng.normal()), float(rng.normal()))
    scores = PersonalityScores(
        user_id,
        extroversion=round(float(np.clip(3 + 0.6 * latent.extroversion_z, 1, 5)), 3),
        neuroticism=round(float(np.clip(3 + 0.6 * latent.neuroticism_z, 1, 5)), 3),
        agreeableness=round(float(np.clip(rng.normal(3.5, 0.5), 1, 5)), 3),
        conscientiousness=round(float(np.clip(rng.normal(3.5, 0.5), 1, 5)), 3),
        openness=round(float(np.clip(rng.normal(3.5, 0.5), 1, 5)), 3),
    )
    calendar = DeadlineCalendar(user_id, frozenset(d for d in course_deadlines if rng.random() < 0.6))

    home = next(p for p in places if p.kind == "home" and p.place_id == len(places) - cfg.n_users + idx)
    campus = [p for p in places if p.kind == "campus"]
    gyms = [p for p in places if p.kind == "gym"]
    venues = [p for p in places if p.kind == "venue"]
    others = [p for p in places if p.kind == "other"]
    grid = SamplingGrid(cfg.grid_hours)
    zone = resolve_timezone(cfg.timezone)

    trace = _Trace(user_id, rng)
    home_since = day_starts[0]
    report_times: List[int] = []

    for d, day_start in enumerate(day_starts):
        day = cfg.start_date + timedelta(days=d)
        pressure = deadline_pressure(calendar, day, cfg.T_days)
        ez, nz = latent.extroversion_z, latent.neuroticism_z

        leave = day_start + int(3600 * float(np.clip(rng.normal(8.5, 0.5), 7.5, 10.0)))
        if rng.random() < 0.15:
            run_start = day_start + int(3600 * 6.5 + rng.uniform(0, 1800))
            run_end = run_start + int(rng.uniform(1900, 3000))
            trace.stay(home, home_since, run_start)
            trace.run(home, run_start, run_end)
            home_since = run_end
            leave = max(leave, run_end + 900)

        campus_h = float(np.clip(5.0 + s * (0.9 * pressure - 0.7 * ez + 0.5 * nz) + rng.normal(0, 1.0), 1.0, 10.0))
        stops = [(campus[int(rng.integers(len(campus)))], int(3600 * campus_h))]
        if rng.random() < 0.4:
            stops.append((others[int(rng.integers(len(others)))], int(rng.uniform(1800, 7200))))
        if rng.random() < _sigmoid(-1.0 + s * (0.4 * ez - 0.4 * nz)):
            stops.append((gyms[int(rng.integers(len(gyms)))], 3600))
        if rng.random() < _sigmoid(-0.3 + s * (0.8 * ez - 0.5 * pressure)):
            stops.append((venues[int(rng.integers(len(venues)))], int(rng.uniform(3600, 9000))))

        latest = day_start + int(3600 * 23.5)
        trace.stay(home, home_since, leave)
        current, t = home, leave
        for place, duration in stops:
            go = _travel_s(current, place)
            back = _travel_s(place, home)
            if t + go + duration + back > latest:
                break
            trace.travel(current, place, t, t + go)
            trace.stay(place, t + go, t + go + duration)
            current, t = place, t + go + duration
        back = _travel_s(current, home)
        trace.travel(current, home, t, t + back)
        home_since = t + back

        for t_index in range(len(grid)):
            lo, hi = grid.stress_window(day, t_index, zone)
            lo = max(lo, day_start + 8 * 3600)
            hi = min(hi, latest)
            if hi > lo and rng.random() < cfg.report_rate:
                report_times.append(int(rng.integers(int(lo), int(hi))))

    trace.stay(home, home_since, day_starts[-1] + DAY_S)
    return trace, latent, calendar, scores, sorted(report_times)


# ==================== 真值 ====================

def _true_units(
    cfg: SimConfig,
    user_id: str,
    trace: _Trace,
    labels: Dict[str, Dict[int, PlaceLabel]],
    calendar: DeadlineCalendar,
    report_times: List[int],
    grid: SamplingGrid,
    feature_cfg: FeatureConfig,
) -> List[Unit]:
    """按真实停留计算暴露量; S / PS 先占位, 压力生成后回填"""
    zone = resolve_timezone(cfg.timezone)
    report_days = {local_date(ts, zone) for ts in report_times}
    slots = sorted({(local_date(ts, zone), _window_index(ts, grid, zone)) for ts in report_times})
    bouts = exercise_bouts(trace.activity, feature_cfg)

    units = []
    for day, t_index in slots:
        if day - timedelta(days=1) not in report_days:
            continue
        lo = grid.day_start(day, zone)
        visits = [v for v in trace.visits if v.exit_ts >= lo and v.enter_ts < lo + DAY_S + 3600]
        h, u, o = sojourn_seconds(visits, labels, user_id, day, t_index, grid, zone)
        sc = social_seconds(visits, labels, user_id, day, t_index, grid, zone)
        e = exercise_seconds(visits, labels, [], user_id, day, t_index, feature_cfg, grid, zone, bouts=bouts)
        units.append(Unit(user_id, day, t_index, h, u, o, e, sc, 0.0, 0.0,
                          deadline_pressure(calendar, day, cfg.T_days)))
    return units


def _window_index(ts: int, grid: SamplingGrid, zone) -> int:
    day = local_date(ts, zone)
    for t_index in range(len(grid)):
        lo, hi = grid.stress_window(day, t_index, zone)
        if lo <= ts < hi:
            return t_index
    raise ValueError(f"时间戳 {ts} 不在任何采样窗口内")


def naive_ate(
    units: Sequence[Unit],
    rule: TreatmentRule,
    n_strata: int = 6,
    design_cfg: Optional[DesignConfig] = None,
) -> float:
    """
    未匹配的朴素 ATE: mean(S | 处理) − mean(S | 对照)

    处理分配与匹配研究相同 (逐分层按规则); 任一组为空时抛出 DegenerateDesignError。
    """
    strata = design_strata(units, rule, n_strata, design_cfg)
    treated = [u.S for s in strata for u in s.treated]
    control = [u.S for s in strata for u in s.control]
    if not treated or not control:
        raise DegenerateDesignError("degenerate design: 处理组或对照组为空")
    return float(np.mean(treated) - np.mean(control))


# ==================== 生成 ====================

def generate(cfg: Optional[SimConfig] = None) -> Simulation:
    """
    生成合成数据集及真值

    Args:
        cfg: 模拟配置

    Returns:
        Simulation (数据集, 真值, POI, 校园边界, 地点)
    """
    cfg = cfg or SimConfig()
    zone = resolve_timezone(cfg.timezone)
    grid = SamplingGrid(cfg.grid_hours)
    feature_cfg = FeatureConfig(T_days=cfg.T_days)
    days = [cfg.start_date + timedelta(days=d) for d in range(cfg.n_days)]
    day_starts = [int(grid.day_start(d, zone)) for d in days]

    places, pois, campus = build_geography(cfg)
    course_rng = np.random.default_rng([cfg.seed, 1_000_000])
    course_deadlines = [d for d in days + [days[-1] + timedelta(days=k) for k in range(1, cfg.T_days)]
                        if course_rng.random() < 0.12]

    # 第一阶段: 日程与自评时刻
    users = []
    for idx in range(cfg.n_users):
        users.append(_simulate_user(cfg, idx, places, course_deadlines, day_starts))

    # 第二阶段: 真实暴露量与处理分配
    labels = {trace.user_id: {p.place_id: p.label for p in places} for trace, *_ in users}
    units: List[Unit] = []
    for trace, _, calendar, _, report_times in users:
        units.extend(_true_units(cfg, trace.user_id, trace, labels, calendar, report_times, grid, feature_cfg))
    try:
        strata = design_strata(units, cfg.rule, len(grid))
        treated_keys = {u.key for s in strata for u in s.treated}
    except DegenerateDesignError:
        logger.warning("合成数据中没有可用分层, 所有单元视为对照")
        treated_keys = set()
    by_key = {u.key: u for u in units}

    # 第三阶段: 按时间顺序生成压力自评
    s = cfg.confounding_strength
    stress: Dict[str, List[StressReport]] = {}
    counterfactuals = []
    for trace, latent, calendar, _, report_times in users:
        rng = trace.rng
        last_by_day: Dict[date, float] = {}
        reports = []
        for ts in report_times:
            day = local_date(ts, zone)
            t_index = _window_index(ts, grid, zone)
            prev = last_by_day.get(day - timedelta(days=1), 3.0)
            key = f"{trace.user_id}|{day.isoformat()}|{t_index}"
            treated = key in treated_keys
            pressure = deadline_pressure(calendar, day, cfg.T_days)
            y0 = (3.0 + s * (0.5 * latent.neuroticism_z - 0.4 * latent.extroversion_z + 0.6 * pressure)
                  + 0.25 * (prev - 3.0) + float(rng.normal(0.0, cfg.noise_sd)))
            level = round(y0 + (cfg.true_ate if treated else 0.0), 4)
            reports.append(StressReport(trace.user_id, ts, level))
            last_by_day[day] = level

            unit = by_key.get(key)
            if unit is not None:
                unit.S = level
                unit.PS = last_by_day[day - timedelta(days=1)]
                counterfactuals.append({
                    "user_id": trace.user_id, "day": day.isoformat(), "t_index": t_index,
                    "treated": treated, "y0": round(level - (cfg.true_ate if treated else 0.0), 4),
                    "y1": round(level + (0.0 if treated else cfg.true_ate), 4),
                })
        stress[trace.user_id] = reports

    try:
        naive = naive_ate(units, cfg.rule, len(grid))
    except DegenerateDesignError:
        naive = None

    ds = RawDataset(
        users=[trace.user_id for trace, *_ in users],
        gps={trace.user_id: trace.gps for trace, *_ in users},
        activity={trace.user_id: sorted(trace.activity, key=lambda a: a.timestamp) for trace, *_ in users},
        stress=stress,
        deadlines={trace.user_id: calendar for trace, _, calendar, *_ in users},
        personality={trace.user_id: scores for trace, _, _, scores, _ in users},
        timezone=cfg.timezone,
    )
    for uid in ds.users:
        ds.gps[uid].sort(key=lambda g: g.timestamp)

    truth = GroundTruth(
        true_ate=cfg.true_ate,
        naive_ate=naive,
        treatment=cfg.treatment,
        treatment_kind=cfg.treatment_kind.value,
        alpha=cfg.alpha,
        confounding_strength=cfg.confounding_strength,
        seed=cfg.seed,
        n_units=len(units),
        n_treated=len(treated_keys),
        units=counterfactuals,
    )
    logger.info(f"合成数据生成完成: 用户={cfg.n_users}, 天数={cfg.n_days}, 单元={len(units)}, "
                f"处理={len(treated_keys)}, 朴素ATE={naive}")
    return Simulation(ds, truth, pois, campus, places)


def write_simulation(sim: Simulation, root_path: Union[str, Path]) -> Path:
    """写出 CSV 数据集、poi.csv、campus.geojsonl 与 ground_truth.json"""
    root = write_dataset(sim.dataset, root_path)
    pd.DataFrame(
        [(p.name, p.latitude, p.longitude, p.keyword.value) for p in sim.pois],
        columns=["name", "lat", "lon", "keyword"],
    ).to_csv(root / POI_FILE, index=False)
    with open(root / CAMPUS_FILE, 'w', encoding='utf-8') as f:
        f.write(json.dumps([[lat, lon] for lat, lon in sim.campus]) + "\n")
    with open(root / GROUND_TRUTH_FILE, 'w', encoding='utf-8') as f:
        json.dump(sim.ground_truth.to_dict(), f, sort_keys=True, indent=2)
    logger.info(f"合成数据已写出: {root}")
    return root
