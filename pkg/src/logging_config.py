"""
统一日志配置
"""
import logging
import sys
from pathlib import Path
from typing import Union


def setup_logging(log_level=logging.INFO, log_dir: Union[str, Path] = 'logs'):
    """
    配置日志系统
    
    Args:
        log_level: 日志级别
        log_dir: 日志目录
    """
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    
    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    date_format = '%Y-%m-%d %H:%M:%S'
    
    logging.basicConfig(
        level=log_level,
        format=log_format,
        datefmt=date_format,
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(
                log_dir / 'quasicause.log',
                encoding='utf-8'
            )
        ],
        force=True
    )
    
    logger = logging.getLogger(__name__)
    logger.info("日志系统初始化完成")
