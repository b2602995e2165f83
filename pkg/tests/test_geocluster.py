"""
测试位置聚类与停留推导
"""
import math
import random

import pytest

from src.geocluster import (ClusterConfig, SampleAssignment, cluster_locations, derive_visits, haversine_m,
                            moving_flags)
from src.ingest import ActivityClass, ActivitySample, GpsSample

LAT0, LON0 = 43.7022, -72.2896
M_PER_DEG_LAT = math.pi / 180 * 6371000.0


def north(meters: float) -> float:
    return LAT0 + meters / M_PER_DEG_LAT


def gps(ts, lat=LAT0, lon=LON0, accuracy=10.0, user="u1"):
    return GpsSample(user, ts, lat, lon, accuracy)


def reference_moving(sample, prev, activity, window=300, speed=1.5):
    """最近的活动样本 (等距取较早者) 在窗口内则由它决定, 否则看与上一样本的速度"""
    nearest = None
    for j, a in enumerate(activity):
        key = (abs(a.timestamp - sample.timestamp), j)
        if nearest is None or key < nearest[0]:
            nearest = (key, a)
    if nearest is not None and nearest[0][0] <= window:
        return nearest[1].activity_class in (ActivityClass.WALKING, ActivityClass.RUNNING)
    if prev is not None and sample.timestamp > prev.timestamp:
        d = haversine_m((prev.latitude, prev.longitude), (sample.latitude, sample.longitude))
        return d / (sample.timestamp - prev.timestamp) > speed
    return False


def reference_clusters(samples, activity=(), radius=50.0, accuracy_max=50.0):
    """逐行照搬聚类规则的参考实现"""
    clusters = []  # [id, sum_lat, sum_lon, count]
    result = []
    prev = None
    for s in samples:
        moving = reference_moving(s, prev, activity)
        prev = s
        if s.accuracy > accuracy_max or moving:
            result.append(None)
            continue
        chosen = None
        for c in clusters:
            if haversine_m((c[1] / c[3], c[2] / c[3]), (s.latitude, s.longitude)) <= radius:
                chosen = c
                break
        if chosen is None:
            chosen = [len(clusters), s.latitude, s.longitude, 1]
            clusters.append(chosen)
        else:
            chosen[1] += s.latitude
            chosen[2] += s.longitude
            chosen[3] += 1
        result.append(chosen[0])
    return result


class TestHaversine:
    """测试球面距离"""

    def test_one_degree_latitude(self):
        assert haversine_m((0.0, 0.0), (1.0, 0.0)) == pytest.approx(111194.93, rel=1e-6)

    def test_symmetric_and_zero(self):
        a, b = (LAT0, LON0), (north(120), LON0 + 0.001)
        assert haversine_m(a, b) == pytest.approx(haversine_m(b, a))
        assert haversine_m(a, a) == 0.0


class TestMovingFlags:
    """测试移动判断"""

    def test_activity_sample_decides(self):
        samples = [gps(0), gps(600)]
        activity = [ActivitySample("u1", 0, ActivityClass.STATIONARY),
                    ActivitySample("u1", 590, ActivityClass.WALKING)]

        assert moving_flags(samples, activity, ClusterConfig()) == [False, True]

    def test_speed_fallback_without_activity(self):
        """窗口内没有活动样本时按隐含速度判断"""
        samples = [gps(0), gps(60, lat=north(1000)), gps(3600, lat=north(1010))]

        assert moving_flags(samples, [], ClusterConfig()) == [False, True, False]


class TestClusterLocations:
    """测试顺序式聚类"""

    def test_nearby_samples_share_cluster(self):
        samples = {"u1": [gps(0), gps(600, lat=north(30)), gps(1200, lat=north(400)), gps(1800, lat=north(410))]}

        clusters, assignment = cluster_locations(samples, {})

        assert [a.cluster_id for a in assignment["u1"]] == [0, 0, 1, 1]
        assert clusters[0].member_count == 2
        assert clusters[0].centroid_lat == pytest.approx(north(15))
        assert clusters[1].user_id == "u1"

    def test_inaccurate_and_moving_samples_unassigned(self):
        samples = {"u1": [gps(0), gps(600, accuracy=60.0), gps(1200, accuracy=50.0), gps(1800)]}
        activity = {"u1": [ActivitySample("u1", 1800, ActivityClass.RUNNING)]}

        _, assignment = cluster_locations(samples, activity)

        assert [a.cluster_id for a in assignment["u1"]] == [0, None, 0, None]

    def test_clusters_are_per_user(self):
        samples = {"u1": [gps(0)], "u2": [gps(0, user="u2")]}

        clusters, assignment = cluster_locations(samples, {})

        assert [(c.cluster_id, c.user_id) for c in clusters] == [(0, "u1"), (1, "u2")]
        assert assignment["u2"][0].cluster_id == 1

    def test_shared_clusters(self):
        samples = {"u1": [gps(0)], "u2": [gps(0, user="u2")]}

        clusters, assignment = cluster_locations(samples, {}, ClusterConfig(per_user=False))

        assert len(clusters) == 1
        assert clusters[0].user_id is None
        assert clusters[0].member_count == 2

    def test_matches_reference_on_random_traces(self):
        """随机轨迹 (含活动流) 上与参考实现逐样本一致"""
        rng = random.Random(42)
        classes = list(ActivityClass)
        for _ in range(50):
            anchors = [(rng.uniform(-500, 500), rng.uniform(-500, 500)) for _ in range(3)]
            ts = 0
            trace = []
            for _ in range(rng.randint(20, 1000)):
                ts += rng.randint(60, 900)
                dy, dx = rng.choice(anchors)
                dy += rng.uniform(-60, 60)
                dx += rng.uniform(-60, 60)
                lon = LON0 + dx / (M_PER_DEG_LAT * math.cos(math.radians(LAT0)))
                trace.append(gps(ts, lat=north(dy), lon=lon, accuracy=rng.uniform(5, 80)))
            stamps = sorted(rng.sample(range(ts + 600), rng.randint(0, len(trace) // 4)))
            activity = [ActivitySample("u1", t, rng.choice(classes)) for t in stamps]

            _, assignment = cluster_locations({"u1": trace}, {"u1": activity})

            assert [a.cluster_id for a in assignment["u1"]] == reference_clusters(trace, activity)


class TestDeriveVisits:
    """测试停留推导"""

    def test_cluster_change_and_gap_split_visits(self):
        rows = [SampleAssignment("u1", ts, cid) for ts, cid in [
            (0, 0), (600, 0), (1200, None), (1800, 0), (2400, 1), (3000, 1), (9000, 1), (9600, 1),
        ]]

        visits = derive_visits({"u1": rows})

        assert [(v.cluster_id, v.enter_ts, v.exit_ts) for v in visits] == [
            (0, 0, 1800), (1, 2400, 3000), (1, 9000, 9600),
        ]
        assert visits[0].duration == 1800

    def test_single_sample_visits_dropped(self):
        """单个样本的停留跨度为 0, 不输出"""
        rows = [SampleAssignment("u1", ts, cid) for ts, cid in [
            (0, 0), (600, 1), (1200, 1), (1800, 0), (9000, 1),
        ]]

        visits = derive_visits({"u1": rows, "u2": [SampleAssignment("u2", 0, 2)]})

        assert [(v.user_id, v.cluster_id, v.enter_ts, v.exit_ts) for v in visits] == [("u1", 1, 600, 1200)]

    def test_visits_do_not_overlap(self, small_sim):
        ds = small_sim.dataset
        _, assignment = cluster_locations(ds.gps, ds.activity)
        visits = derive_visits(assignment)

        by_user = {}
        for v in visits:
            by_user.setdefault(v.user_id, []).append(v)
        for user_visits in by_user.values():
            for a, b in zip(user_visits, user_visits[1:]):
                assert a.exit_ts <= b.enter_ts
            assert all(v.exit_ts > v.enter_ts for v in user_visits)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
