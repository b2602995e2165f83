# -*- coding: utf-8 -*-
"""
配置加载模块
读取研究配置 (JSON, 以 yaml.safe_load 解析), 校验字段, 解析相对路径,
应用命令行覆盖并计算配置哈希。
"""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .design import DesignConfig, SubpopulationFilter, TreatmentKind, TreatmentRule
from .errors import ConfigError
from .featurize import FeatureConfig, SamplingGrid
from .geocluster import ClusterConfig
from .ingest import resolve_timezone
from .matchopt import GeneticConfig
from .placesem import LabelConfig
from .screen import ScreeningConfig
from .simulate import SimConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
THREADS_ENV = "QUASICAUSE_THREADS"

DEFAULT_TREATMENTS = [
    {"variable": "U", "rule": "low_tail", "alphas": [0.0, 0.05, 0.1, 0.15]},
    {"variable": "O", "rule": "high_tail", "alphas": [0.0, 0.05, 0.1, 0.15]},
    {"variable": "SC", "rule": "positive"},
    {"variable": "E", "rule": "positive"},
]
DEFAULT_SUBPOPULATIONS = ["all", "extroverts", "neurotics"]


@dataclass
class TreatmentSpec:
    variable: str
    kind: TreatmentKind
    alphas: List[float]


@dataclass
class StudyConfig:
    """研究配置 (路径均已解析为绝对路径)"""
    path: Path
    raw: Dict[str, Any]
    data_root: Path
    timezone: str
    seed: int
    output_dir: Path
    poi_file: Optional[Path]
    campus_file: Optional[Path]
    grid: SamplingGrid
    clustering: ClusterConfig
    labeling: LabelConfig
    features: FeatureConfig
    screening: ScreeningConfig
    design: DesignConfig
    matching: Dict[str, Any]
    treatments: List[TreatmentSpec]
    subpopulations: List[SubpopulationFilter]
    threads: int = 1
    force: bool = False
    config_hash: str = ""

    def rules(self) -> List[TreatmentRule]:
        rules = []
        for spec in self.treatments:
            alphas = [0.0] if spec.kind == TreatmentKind.POSITIVE else spec.alphas
            rules.extend(self.design.rule(spec.variable, spec.kind, a) for a in alphas)
        return rules

    def genetic(self, threads: int = 1) -> GeneticConfig:
        return GeneticConfig.from_dict(self.matching, seed=self.seed, threads=threads)


def read_document(path: Union[str, Path]) -> Dict[str, Any]:
    """读取配置文档 (JSON 或 YAML)"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path.name} missing")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path.name}: 无法解析 ({e})") from e
    if not isinstance(document, dict):
        raise ConfigError(f"{path.name}: 顶层必须是对象")
    version = document.get('schema_version', SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path.name}: 不支持的 schema_version {version}")
    return document


def config_hash(document: Dict[str, Any]) -> str:
    """规范化 JSON (键排序, 不含 threads) 的 SHA-256"""
    canonical = {k: v for k, v in document.items() if k != 'threads'}
    text = json.dumps(canonical, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def resolve_threads(override: Optional[int], document: Dict[str, Any]) -> int:
    """线程数: 命令行 > 环境变量 QUASICAUSE_THREADS > 配置 > 1"""
    value = override
    if value is None and os.getenv(THREADS_ENV):
        try:
            value = int(os.getenv(THREADS_ENV))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} 必须是整数: {os.getenv(THREADS_ENV)!r}") from None
    if value is None:
        value = document.get('threads', 1)
    if not isinstance(value, int) or value < 1:
        raise ConfigError(f"threads 必须是正整数, 当前 {value!r}")
    return value


def _require_int(document: Dict, key: str, default: int) -> int:
    value = document.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{key} 必须是整数, 当前 {value!r}")
    return value


def _section(document: Dict, key: str) -> Dict:
    value = document.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key} 必须是对象")
    return value


def _resolve(base: Path, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else (base / path).resolve()


def _parse_treatments(entries: List[Dict]) -> List[TreatmentSpec]:
    specs = []
    for entry in entries:
        try:
            kind = TreatmentKind(entry.get('rule', "positive"))
        except ValueError:
            raise ConfigError(f"未知处理规则: {entry.get('rule')!r}") from None
        alphas = [float(a) for a in entry.get('alphas', [0.0])]
        for alpha in alphas:
            if not 0 <= alpha < 1:
                raise ConfigError(f"alpha 必须在 [0, 1) 内: {entry.get('variable')} α={alpha}")
        specs.append(TreatmentSpec(str(entry['variable']), kind, alphas))
    return specs


def load_study_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> StudyConfig:
    """
    加载并校验研究配置

    Args:
        path: 配置文件路径
        overrides: 命令行覆盖 (seed / output_dir / threads / force)

    Returns:
        StudyConfig

    Raises:
        ConfigError: 字段非法或引用的文件不存在
    """
    path = Path(path).resolve()
    document = read_document(path)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    threads = resolve_threads(overrides.pop('threads', None), document)
    document.update(overrides)
    base = path.parent

    seed = _require_int(document, 'seed', 0)
    timezone = document.get('timezone', "America/New_York")
    resolve_timezone(timezone)

    data_root = _resolve(base, document.get('data_root'))
    if data_root is None or not data_root.is_dir():
        raise ConfigError(f"data_root 不存在: {document.get('data_root')}")
    poi_file = _resolve(base, document.get('poi_file'))
    campus_file = _resolve(base, document.get('campus_file'))
    for name, file in (("poi_file", poi_file), ("campus_file", campus_file)):
        if file is not None and not file.is_file():
            raise ConfigError(f"{name} 不存在: {file}")

    try:
        grid = SamplingGrid(_section(document, 'grid').get('hours', (4, 8, 12, 16, 20, 24)))
        treatments = _parse_treatments(document.get('treatments', DEFAULT_TREATMENTS))
        subpopulations = [SubpopulationFilter(s) for s in document.get('subpopulations', DEFAULT_SUBPOPULATIONS)]
        cfg = StudyConfig(
            path=path,
            raw=document,
            data_root=data_root,
            timezone=timezone,
            seed=seed,
            output_dir=_resolve(base, document.get('output_dir', "output")),
            poi_file=poi_file,
            campus_file=campus_file,
            grid=grid,
            clustering=ClusterConfig.from_dict(_section(document, 'clustering')),
            labeling=LabelConfig.from_dict(_section(document, 'labeling')),
            features=FeatureConfig.from_dict(_section(document, 'features')),
            screening=ScreeningConfig.from_dict(_section(document, 'screening')),
            design=DesignConfig.from_dict(_section(document, 'design')),
            matching=_section(document, 'matching'),
            treatments=treatments,
            subpopulations=subpopulations,
            threads=threads,
            force=bool(document.get('force', False)),
            config_hash=config_hash(document),
        )
        cfg.genetic()
        cfg.rules()
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{path.name}: 配置字段非法 ({e})") from e

    logger.info(f"配置加载完成: {path.name}, hash={cfg.config_hash[:12]}, seed={seed}, threads={threads}")
    return cfg


def load_sim_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> Tuple[SimConfig, Path]:
    """
    加载模拟配置

    Returns:
        (SimConfig, 输出目录)
    """
    path = Path(path).resolve()
    document = read_document(path)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    document.update(overrides)
    try:
        sim = SimConfig.from_dict(document)
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{path.name}: 配置字段非法 ({e})") from e
    output = _resolve(path.parent, document.get('output_dir', "data/synthetic"))
    return sim, output
