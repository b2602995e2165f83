# -*- coding: utf-8 -*-
"""
结果输出模块
所有导出文件都携带配置哈希与随机种子; 写入通过锁串行化。
"""
import json
import logging
import threading
from pathlib import Path
from typing import Any, Dict, Union

import pandas as pd

from .errors import MissingArtifactError

logger = logging.getLogger(__name__)

HEADER_PREFIX = "# config_hash="


class ReportWriter:
    """串行化的 CSV / JSON 写出器"""

    def __init__(self, output_dir: Union[str, Path], config_hash: str, seed: int):
        self.output_dir = Path(output_dir)
        self.config_hash = config_hash
        self.seed = seed
        self._lock = threading.Lock()
        self.output_dir.mkdir(parents=True, exist_ok=True)

    @property
    def header(self) -> str:
        return f"{HEADER_PREFIX}{self.config_hash}; seed={self.seed}\n"

    def write_csv(self, name: str, df: pd.DataFrame, index: bool = False) -> Path:
        path = self.output_dir / name
        with self._lock:
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write(self.header)
                df.to_csv(f, index=index, lineterminator="\n")
        logger.info(f"已写出 {name}: {len(df)} 行")
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.output_dir / name
        document = dict(payload)
        document["config_hash"] = self.config_hash
        document["seed"] = self.seed
        with self._lock:
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write(json.dumps(document, sort_keys=True, indent=2, ensure_ascii=False, default=str))
                f.write("\n")
        logger.info(f"已写出 {name}")
        return path


def read_export(output_dir: Union[str, Path], name: str, **kwargs) -> pd.DataFrame:
    """
    读回导出的 CSV (跳过哈希头)

    Raises:
        MissingArtifactError: 文件不存在
    """
    path = Path(output_dir) / name
    if not path.is_file():
        raise MissingArtifactError(f"{name} missing")
    with open(path, 'r', encoding='utf-8') as f:
        skip = 1 if f.readline().startswith(HEADER_PREFIX) else 0
    return pd.read_csv(path, skiprows=skip, dtype={"user_id": str}, keep_default_na=True, **kwargs)
