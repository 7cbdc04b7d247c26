"""
模块名称: system_info.py
功能描述: 进程与系统资源快照（长时间蒙特卡洛运行结束后写入日志）
"""

import os
from typing import Any, Dict

import psutil


def resource_snapshot() -> Dict[str, Any]:
    """
    采集 CPU、内存与当前进程占用

    Returns:
        快照字典
    """
    ram = psutil.virtual_memory()
    process = psutil.Process(os.getpid())
    snapshot = {
        'cpu_count': psutil.cpu_count(logical=True),
        'cpu_percent': psutil.cpu_percent(interval=None),
        'ram_percent': ram.percent,
        'ram_used_gb': round(ram.used / (1024 ** 3), 2),
        'ram_total_gb': round(ram.total / (1024 ** 3), 2),
        'process_rss_mb': round(process.memory_info().rss / (1024 ** 2), 1),
    }
    try:
        disk = psutil.disk_usage(os.path.abspath(os.sep))
        snapshot['disk_percent'] = disk.percent
    except FileNotFoundError:
        snapshot['disk_percent'] = None
    return snapshot


def format_snapshot(snapshot: Dict[str, Any]) -> str:
    """单行文本"""
    return (
        f"CPU {snapshot['cpu_percent']}% ({snapshot['cpu_count']} 核) | "
        f"内存 {snapshot['ram_percent']}% ({snapshot['ram_used_gb']} / {snapshot['ram_total_gb']} GB) | "
        f"进程 {snapshot['process_rss_mb']} MB | 磁盘 {snapshot['disk_percent']}%"
    )
