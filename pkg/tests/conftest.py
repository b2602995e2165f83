"""
Pytest配置文件
"""
import json
import os
import sys
from datetime import date
from pathlib import Path

import pytest

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.featurize import STUDY_VARIABLES, Unit  # noqa: E402
from src.screen import CorrelationMatrix  # noqa: E402
from src.simulate import SimConfig, generate, write_simulation  # noqa: E402

DAY0 = 1704067200  # 2024-01-01 00:00 UTC


def write_csv(path: Path, header: str, rows):
    path.write_text(header + "\n" + "".join(",".join(str(v) for v in r) + "\n" for r in rows), encoding="utf-8")


@pytest.fixture
def tiny_dataset_dir(tmp_path):
    """两个用户的手写数据集 (UTC); u3 只有 GPS, 会被排除"""
    root = tmp_path / "data"
    root.mkdir()
    write_csv(root / "gps.csv", "user_id,timestamp,lat,lon,accuracy_m", [
        ("u2", DAY0 + 600, 43.70, -72.29, 10),
        ("u1", DAY0 + 60, 43.70, -72.29, 10),
        ("u1", DAY0, 43.70, -72.29, 12),
        ("u3", DAY0, 43.80, -72.29, 12),
    ])
    write_csv(root / "activity.csv", "user_id,timestamp,activity", [
        ("u1", DAY0, "stationary"),
        ("u1", DAY0 + 60, "walking"),
        ("u2", DAY0 + 600, "running"),
    ])
    write_csv(root / "stress.csv", "user_id,timestamp,level", [
        ("u1", DAY0 + 9 * 3600, 3),
        ("u1", DAY0 + 86400 + 9 * 3600, 4),
        ("u2", DAY0 + 10 * 3600, 2),
    ])
    write_csv(root / "deadlines.csv", "user_id,date", [("u1", "2024-01-05")])
    write_csv(root / "personality.csv",
              "user_id,extroversion,neuroticism,agreeableness,conscientiousness,openness", [
                  ("u1", 3.5, 2.0, 4.0, 3.0, 3.2),
              ])
    return root


@pytest.fixture
def make_unit():
    """研究单元工厂"""
    def factory(user_id="u1", day=date(2024, 1, 10), t_index=2, **values):
        fields = {"H": 0.0, "U": 0.0, "O": 0.0, "E": 0.0, "SC": 0.0, "S": 3.0, "PS": 3.0, "D": 0.0}
        fields.update(values)
        return Unit(user_id=user_id, day=day, t_index=t_index, **fields)
    return factory


# 相关性 p 值 (行变量 × S, H, U, O, E, SC)
TABLE_ROWS = {
    "H": [0.3557, 0.0, 6e-128, 7e-182, 0.0161, 2.7e-6],
    "U": [0.004, 6e-128, 0.0, 2e-6, 0.042, 0.024],
    "O": [6e-5, 7e-182, 2e-6, 0.0, 1e-7, 1e-13],
    "E": [0.0081, 0.0161, 0.042, 1e-7, 0.0, 0.222],
    "SC": [9e-5, 2.7e-6, 0.024, 1e-13, 0.222, 0.0],
    "PS": [2.7e-59, 0.967, 0.0071, 0.055, 0.3897, 0.046],
    "D": [0.024, 2.5e-6, 0.0014, 0.0018, 0.002, 0.0076],
    "extroversion": [1.69e-11, 2.27e-5, 0.059, 4.9e-4, 4.1e-5, 0.0037],
    "neuroticism": [1.81e-14, 0.004, 1.2e-5, 2.3e-16, 0.013, 6e-6],
    "agreeableness": [0.007, 0.21, 0.15, 0.047, 0.006, 0.002],
    "conscientiousness": [0.057, 0.078, 0.01, 0.47, 0.352, 0.214],
    "openness": [0.604, 0.006, 0.005, 2.1e-5, 4.7e-4, 0.95],
}
TABLE_COLUMNS = ["S", "H", "U", "O", "E", "SC"]


@pytest.fixture
def published_matrix():
    """按已发表的相关性 p 值构造的矩阵 (未列出的变量对 p = 1)"""
    p_values = {}
    for row, values in TABLE_ROWS.items():
        for col, value in zip(TABLE_COLUMNS, values):
            if row != col:
                p_values[(row, col)] = value
    return CorrelationMatrix.from_p_values(STUDY_VARIABLES, p_values)


SMALL_SIM = {
    "n_users": 8, "n_days": 14, "seed": 3, "report_rate": 0.6,
    "true_ate": -0.5, "confounding_strength": 1.0, "noise_sd": 0.5,
}

SMALL_MATCHING = {"population_size": 8, "generations": 3, "ratio": 2}


@pytest.fixture(scope="session")
def small_sim():
    return generate(SimConfig.from_dict(SMALL_SIM))


@pytest.fixture(scope="session")
def small_sim_dir(small_sim, tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    write_simulation(small_sim, root)
    return root


@pytest.fixture
def study_config_factory(tmp_path):
    """在临时目录写出研究配置, 数据目录用绝对路径"""
    def factory(data_root, directory="cfg", **overrides):
        data_root = Path(data_root)
        document = {
            "schema_version": 1,
            "data_root": str(data_root),
            "timezone": "America/New_York",
            "seed": 11,
            "output_dir": "out",
            "poi_file": str(data_root / "poi.csv"),
            "campus_file": str(data_root / "campus.geojsonl"),
            "matching": dict(SMALL_MATCHING),
        }
        document.update(overrides)
        folder = tmp_path / directory
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / "study.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        return path
    return factory
