# -*- coding: utf-8 -*-
"""
统一异常定义

每个异常携带 stage (出错阶段) 与 exit_code (CLI 退出码),
main.py 据此输出 "[stage] ErrorClass: message" 并退出。
"""
from typing import Dict, Optional


class QuasiCauseError(Exception):
    """流水线异常基类"""

    exit_code: int = 1
    default_stage: str = "pipeline"

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage or self.default_stage

    def with_stage(self, stage: str) -> "QuasiCauseError":
        """标注出错阶段 (仅在尚未标注时覆盖)"""
        if self.stage == self.default_stage:
            self.stage = stage
        return self

    def __str__(self) -> str:
        return self.message


class ConfigError(QuasiCauseError):
    """配置无效"""
    exit_code = 2
    default_stage = "config"


class DatasetError(QuasiCauseError):
    """输入数据缺失或格式错误"""
    exit_code = 3
    default_stage = "ingest"


class MissingArtifactError(QuasiCauseError):
    """分阶段运行时缺少前置产物"""
    exit_code = 3
    default_stage = "stage"


class ZeroVarianceError(QuasiCauseError):
    """常数向量导致方差为零"""
    exit_code = 4
    default_stage = "screen"


class ConstantCovariateError(ZeroVarianceError):
    """协变量尺度为零"""
    default_stage = "matchopt"


class NoHomeError(QuasiCauseError):
    """用户没有夜间停留, 无法识别住所"""
    exit_code = 3
    default_stage = "placesem"


class StudyRefusedError(QuasiCauseError):
    """研究被拒绝估计 (基类), details 记录拒绝时已有的诊断信息"""
    exit_code = 5
    default_stage = "estimate"

    def __init__(self, message: str, stage: Optional[str] = None, details: Optional[Dict] = None):
        super().__init__(message, stage)
        self.details = details or {}


class TreatmentUncorrelatedError(StudyRefusedError):
    """处理变量与结果变量不相关"""
    default_stage = "screen"


class DegenerateDesignError(StudyRefusedError):
    """处理组或对照组为空"""
    default_stage = "design"


class UnbalancedMatchingError(StudyRefusedError):
    """匹配后协变量未达到平衡"""
    default_stage = "matchopt"


class InsufficientDataError(StudyRefusedError):
    """数据量不足以估计"""
    default_stage = "estimate"
