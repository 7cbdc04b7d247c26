import logging
import os
from datetime import datetime
from logging.handlers import TimedRotatingFileHandler
from typing import Optional, Union

import pytz
from core.constants import (
    LOG_BACKUP_COUNT as DEFAULT_BACKUP_COUNT,
    LOG_DATE_FORMAT as DEFAULT_LOG_DATE_FORMAT,
    LOG_DIR as DEFAULT_LOG_DIR,
    LOG_FORMAT as DEFAULT_LOG_FORMAT,
    LOG_LEVEL as DEFAULT_LOG_LEVEL,
    LOG_NAME as DEFAULT_LOG_NAME,
    LOG_ROTATION as DEFAULT_ROTATION,
    LOG_TIMEZONE as DEFAULT_TIMEZONE,
)


class TimezoneFormatter(logging.Formatter):
    """自定义格式化器，支持特定时区的时间显示"""

    def __init__(self, fmt: Optional[str] = None, datefmt: Optional[str] = None, tz: Optional[pytz.tzinfo.BaseTzInfo] = None):
        """
        初始化时区格式化器

        Args:
            fmt: 日志格式字符串
            datefmt: 时间格式字符串
            tz: 时区对象，默认为UTC
        """
        super().__init__(fmt, datefmt)
        self.tz = tz if tz else pytz.utc

    def formatTime(self, record: logging.LogRecord, datefmt: Optional[str] = None) -> str:
        dt = datetime.fromtimestamp(record.created, self.tz)
        return dt.strftime(datefmt or DEFAULT_LOG_DATE_FORMAT)


def _resolve_level(log_level: Optional[Union[int, str]]) -> int:
    """接受 logging 常量或级别名（'INFO'），缺省取环境变量 DECONF_LOG_LEVEL"""
    level = log_level if log_level is not None else os.environ.get("DECONF_LOG_LEVEL", DEFAULT_LOG_LEVEL)
    if isinstance(level, int):
        return level
    resolved = logging.getLevelName(str(level).upper())
    return resolved if isinstance(resolved, int) else logging.WARNING


def _resolve_timezone(tz_name: Optional[str]) -> pytz.tzinfo.BaseTzInfo:
    name = tz_name or os.environ.get("DECONF_LOG_TZ", DEFAULT_TIMEZONE)
    try:
        return pytz.timezone(name)
    except pytz.UnknownTimeZoneError:
        return pytz.utc


def setup_logger(
    name: str = DEFAULT_LOG_NAME,
    log_dir: Optional[str] = None,
    log_level: Optional[Union[int, str]] = None,
    tz_name: Optional[str] = None,
) -> logging.Logger:
    """
    初始化全局日志系统，并返回指定名称的日志记录器。
    - 处理器绑定到 root logger，任意模块 logger 都写入同一套处理器
    - 日志目录默认 data/logs，可由 DECONF_LOG_DIR 覆盖
    - 单一文件：<log_dir>/deconf.log（按日轮转）
    """
    level = _resolve_level(log_level)

    # 若 root 已配置处理器，则只调整级别并返回命名 logger
    root_logger = logging.getLogger()
    if root_logger.handlers:
        root_logger.setLevel(level)
        for handler in root_logger.handlers:
            handler.setLevel(level)
        return logging.getLogger(name)

    log_dir = log_dir or os.environ.get("DECONF_LOG_DIR") or str(DEFAULT_LOG_DIR)
    os.makedirs(log_dir, exist_ok=True)

    formatter = TimezoneFormatter(
        DEFAULT_LOG_FORMAT,
        datefmt=DEFAULT_LOG_DATE_FORMAT,
        tz=_resolve_timezone(tz_name),
    )

    # 文件处理器：按日轮转
    file_handler = TimedRotatingFileHandler(
        os.path.join(log_dir, f'{DEFAULT_LOG_NAME}.log'),
        when=DEFAULT_ROTATION,
        interval=1,
        backupCount=DEFAULT_BACKUP_COUNT,
        encoding='utf-8',
    )
    file_handler.setFormatter(formatter)
    file_handler.setLevel(level)

    # 控制台处理器
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(level)

    root_logger.setLevel(level)
    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)

    # 捕获 warnings 到日志
    logging.captureWarnings(True)

    return logging.getLogger(name)


def get_logger(name: str) -> logging.Logger:
    """
    获取指定名称的日志记录器。
    若全局日志尚未初始化，则进行一次惰性初始化。
    """
    root_logger = logging.getLogger()
    if not root_logger.handlers:
        setup_logger()
    return logging.getLogger(name)
