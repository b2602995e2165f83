"""
测试地点语义标注
"""
import math
import random

import pytest
from dateutil import tz

from conftest import DAY0
from src.errors import DatasetError, NoHomeError
from src.geocluster import LocationCluster, Visit
from src.placesem import (CampusBoundary, CsvPoiLookup, LabelConfig, PlaceLabel, PoiKeyword, PoiRecord,
                          label_clusters, label_home, label_users, load_campus, load_poi, night_seconds)

UTC = tz.UTC
LAT0, LON0 = 43.7022, -72.2896
HOUR = 3600


def north(meters: float) -> float:
    return LAT0 + meters / 111194.93


def cluster(cid, lat=LAT0, lon=LON0):
    return LocationCluster(cid, "u1", lat, lon, 1)


def visit(cid, start_h, end_h, user="u1"):
    return Visit(user, cid, DAY0 + int(start_h * HOUR), DAY0 + int(end_h * HOUR))


class TestNightSeconds:
    """测试夜间时长"""

    def test_visit_across_midnight(self):
        assert night_seconds(visit(0, 23, 25), UTC, LabelConfig()) == 7200

    def test_visit_after_night_end(self):
        assert night_seconds(visit(0, 6, 8), UTC, LabelConfig()) == 3600

    def test_daytime_visit(self):
        assert night_seconds(visit(0, 9, 17), UTC, LabelConfig()) == 0

    def test_config_from_dict(self):
        cfg = LabelConfig.from_dict({"night_start": "21:30", "night_end": "06:00"})
        assert night_seconds(visit(0, 21, 22), UTC, cfg) == 1800


class TestLabelHome:
    """测试住所识别"""

    def test_longest_night_stay_wins(self):
        visits = [visit(0, 0, 1), visit(1, 1, 7), visit(0, 9, 17)]

        assert label_home(visits, [cluster(0), cluster(1)], UTC) == 1

    def test_tie_goes_to_lower_id(self):
        visits = [visit(1, 0, 2), visit(0, 2, 4)]

        assert label_home(visits, [cluster(0), cluster(1)], UTC) == 0

    def test_no_night_stay(self):
        with pytest.raises(NoHomeError):
            label_home([visit(0, 9, 17)], [cluster(0)], UTC)


class TestPoiLookup:
    """测试 POI 查询"""

    def test_radius_is_strict(self):
        lookup = CsvPoiLookup([PoiRecord("gym_a", north(30), LON0, PoiKeyword.GYM)])

        assert lookup.nearest_poi(LAT0, LON0, 50.0).name == "gym_a"
        assert lookup.nearest_poi(LAT0, LON0, 25.0) is None

    def test_nearest_wins(self):
        lookup = CsvPoiLookup([
            PoiRecord("far", north(40), LON0, PoiKeyword.BAR),
            PoiRecord("near", north(10), LON0, PoiKeyword.CAFE),
        ])

        assert lookup.nearest_poi(LAT0, LON0, 50.0).name == "near"

    def test_tie_breaks_by_name(self):
        lookup = CsvPoiLookup([
            PoiRecord("b", north(20), LON0, PoiKeyword.BAR),
            PoiRecord("a", north(20), LON0, PoiKeyword.CAFE),
        ])

        assert lookup.nearest_poi(LAT0, LON0, 50.0).name == "a"

    def test_load_poi_rejects_unknown_keyword(self, tmp_path):
        path = tmp_path / "poi.csv"
        path.write_text("name,lat,lon,keyword\nlib,43.7,-72.29,library\n", encoding="utf-8")

        with pytest.raises(DatasetError, match="未知 POI 类型"):
            load_poi(path)


class TestCampusBoundary:
    """测试校园边界"""

    def test_contains(self):
        campus = CampusBoundary([(0, 0), (0, 1), (1, 1), (1, 0), (0, 0)])

        assert campus.contains(0.5, 0.5)
        assert not campus.contains(1.5, 0.5)
        assert len(campus.polygon) == 4

    def test_concave_polygon_against_rectangles(self):
        """U 形校园: 与按矩形拼出的精确判定逐点一致"""
        campus = CampusBoundary([(0, 0), (0, 3), (3, 3), (3, 2), (1, 2), (1, 1), (3, 1), (3, 0), (0, 0)])

        def in_u_shape(lat, lon):
            bottom = 0 < lat < 1 and 0 < lon < 3
            arms = 1 <= lat < 3 and (0 < lon < 1 or 2 < lon < 3)
            return bottom or arms

        rng = random.Random(5)
        points = [(rng.uniform(-0.5, 3.5), rng.uniform(-0.5, 3.5)) for _ in range(1000)]

        assert [campus.contains(*p) for p in points] == [in_u_shape(*p) for p in points]
        assert not campus.contains(2.0, 1.5)
        assert campus.contains(0.5, 1.5)

    def test_star_polygon_against_winding_number(self):
        """星形 (凹) 校园: 与绕数判定逐点一致"""
        radii = [0.4, 1.0] * 6
        star = [(r * math.sin(k * math.pi / 6), r * math.cos(k * math.pi / 6)) for k, r in enumerate(radii)]
        campus = CampusBoundary(star)

        def winding(lat, lon):
            total = 0.0
            for (y1, x1), (y2, x2) in zip(star, star[1:] + star[:1]):
                a = math.atan2(y1 - lat, x1 - lon)
                b = math.atan2(y2 - lat, x2 - lon)
                total += (b - a + math.pi) % (2 * math.pi) - math.pi
            return abs(total) > math.pi

        rng = random.Random(9)
        points = [(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)) for _ in range(1000)]

        assert [campus.contains(*p) for p in points] == [winding(*p) for p in points]

    def test_self_intersecting_rejected(self):
        with pytest.raises(DatasetError, match="自相交"):
            CampusBoundary([(0, 0), (1, 1), (0, 1), (1, 0)])

    def test_too_few_vertices(self):
        with pytest.raises(DatasetError):
            CampusBoundary([(0, 0), (1, 1), (0, 0)])

    def test_load_campus(self, tmp_path):
        path = tmp_path / "campus.geojsonl"
        path.write_text("[[0, 0], [0, 2], [2, 2], [2, 0], [0, 0]]\n", encoding="utf-8")

        assert load_campus(path).contains(1.0, 1.0)


class TestLabelClusters:
    """测试簇标注"""

    def test_each_rule(self):
        campus_center = (LAT0 + 0.01, LON0)
        campus = CampusBoundary([
            (campus_center[0] - 0.003, LON0 - 0.003), (campus_center[0] - 0.003, LON0 + 0.003),
            (campus_center[0] + 0.003, LON0 + 0.003), (campus_center[0] + 0.003, LON0 - 0.003),
        ])
        lookup = CsvPoiLookup([
            PoiRecord("gym_0", LAT0 + 0.02, LON0, PoiKeyword.GYM),
            PoiRecord("cafe_0", LAT0 + 0.03, LON0, PoiKeyword.CAFE),
            PoiRecord("bar_0", campus_center[0] + 0.001, LON0, PoiKeyword.BAR),
        ])
        clusters = [
            cluster(0),
            cluster(1, LAT0 + 0.02),
            cluster(2, LAT0 + 0.03),
            cluster(3, *campus_center),
            cluster(4, LAT0 - 0.02),
            cluster(5, campus_center[0] + 0.001),
        ]

        labels = label_clusters(clusters, 0, lookup, campus)

        assert labels == {
            0: PlaceLabel.HOME,
            1: PlaceLabel.GYM_SPORTS,
            2: PlaceLabel.SOCIALIZATION_VENUE,
            3: PlaceLabel.WORK_UNIVERSITY,
            4: PlaceLabel.OTHER,
            5: PlaceLabel.SOCIALIZATION_VENUE,
        }

    def test_without_campus_everything_else_is_other(self):
        labels = label_clusters([cluster(0), cluster(1, LAT0 + 0.01)], 0, CsvPoiLookup([]), None)

        assert labels[1] == PlaceLabel.OTHER


class TestLabelUsers:
    """测试逐用户标注"""

    def test_user_without_home_reported(self):
        clusters = [cluster(0), LocationCluster(1, "u2", LAT0, LON0, 1)]
        visits = [visit(0, 0, 6), visit(1, 10, 12, user="u2")]

        labels, no_home = label_users(clusters, visits, ["u1", "u2"], UTC, CsvPoiLookup([]), None)

        assert labels == {"u1": {0: PlaceLabel.HOME}}
        assert no_home == ["u2"]

    def test_simulated_homes_found(self, small_sim):
        """合成数据中每个用户的住所都落在其家的位置"""
        from src.geocluster import cluster_locations, derive_visits, haversine_m

        ds = small_sim.dataset
        clusters, assignment = cluster_locations(ds.gps, ds.activity)
        visits = derive_visits(assignment)
        labels, no_home = label_users(clusters, visits, ds.active_users, ds.tz,
                                      CsvPoiLookup(small_sim.pois), CampusBoundary(small_sim.campus))

        assert no_home == []
        by_id = {c.cluster_id: c for c in clusters}
        homes = [p for p in small_sim.places if p.kind == "home"]
        for user, user_labels in labels.items():
            home_ids = [cid for cid, label in user_labels.items() if label == PlaceLabel.HOME]
            assert len(home_ids) == 1
            c = by_id[home_ids[0]]
            assert min(haversine_m((c.centroid_lat, c.centroid_lon), (h.latitude, h.longitude))
                       for h in homes) < 20


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
