"""
模块名称: exceptions.py
功能描述: 自定义异常类定义
"""

from typing import Any, Optional


class DeconfBaseException(Exception):
    """基础异常类"""

    def __init__(self, message: str, code: Optional[str] = None):
        """
        初始化异常

        Args:
            message: 异常消息
            code: 错误代码
        """
        super().__init__(message)
        self.message = message
        self.code = code


class ConfigurationException(DeconfBaseException):
    """配置相关异常（参数越界、缺失字段等）"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message, "CONFIG_ERROR")
        self.field = field


class EnumerationLimitException(ConfigurationException):
    """处理组合枚举超出上限"""

    def __init__(self, m: int, limit: int):
        super().__init__(f"处理数 m={m} 超出枚举上限 {limit}", "m")
        self.code = "ENUMERATION_LIMIT"
        self.m = m
        self.limit = limit


class DataValidationException(DeconfBaseException):
    """数据验证异常（CSV 解析、数据集不变量）"""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        column: Optional[str] = None,
    ):
        if line is not None:
            message = f"第 {line} 行: {message}"
        super().__init__(message, "DATA_ERROR")
        self.line = line
        self.column = column


class IdentificationException(DeconfBaseException):
    """识别失败异常（秩亏、共线、支撑不满足、工具变量不足）"""

    def __init__(self, message: str, detail: Optional[Any] = None):
        super().__init__(message, "IDENTIFICATION_ERROR")
        self.detail = detail


class WeightExplosionException(IdentificationException):
    """重要性权重分母过小"""

    def __init__(self, row: int, value: float):
        super().__init__(
            f"第 {row} 个观测的权重分母 {value:.3e} 低于下限，权重爆炸",
            {"row": row, "value": value},
        )
        self.code = "WEIGHT_EXPLOSION"
        self.row = row
        self.value = value


class FileOperationException(DeconfBaseException):
    """文件操作异常"""

    def __init__(self, message: str, file_path: Optional[str] = None):
        super().__init__(message, "FILE_ERROR")
        self.file_path = file_path
