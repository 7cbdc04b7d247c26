"""
模块名称: formatters.py
功能描述: 命令行输出格式化：进度条、估计报告摘要、蒙特卡洛汇总表、错误消息
"""

from typing import Any, Dict, List, Optional, Sequence


def format_duration(seconds: float) -> str:
    """把秒数写成 "1小时 2分钟 5.0秒"；负数记为 "0秒"，零记为 "0.0秒" """
    if seconds < 0:
        return "0秒"
    minutes_total, secs = divmod(float(seconds), 60)
    hours, minutes = divmod(int(minutes_total), 60)
    units = [(hours, "小时"), (minutes, "分钟")]
    parts = [f"{value}{unit}" for value, unit in units if value > 0]
    if secs > 0 or not parts:
        parts.append(f"{secs:.1f}秒")
    return " ".join(parts)


def create_progress_bar(current: int, total: int, length: int = 20,
                        filled_char: str = "#", empty_char: str = ".") -> str:
    """蒙特卡洛副本进度，形如 [#####.....] 50.0%；total 为 0 时只画空条"""
    if total <= 0:
        return empty_char * length
    done = min(max(current, 0), total)
    filled = length * done // total
    bar = filled_char * filled + empty_char * (length - filled)
    return f"[{bar}] {100.0 * done / total:.1f}%"


def _fmt(value: Any, digits: int = 6) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        if value != value:
            return "nan"
        return f"{value:.{digits}g}"
    return str(value)


def format_table(headers: Sequence[str], rows: List[Sequence[Any]]) -> str:
    """等宽文本表格"""
    cells = [[str(h) for h in headers]] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def format_estimate(report: Dict[str, Any]) -> str:
    """
    估计报告的文本摘要

    Args:
        report: EstimateReport.to_dict() 的结果

    Returns:
        多行文本
    """
    lines = [
        f"方法: {report.get('method')}    估计量: {report.get('estimand')}",
        f"估计值: {_fmt(report.get('estimate'))}    标准误: {_fmt(report.get('std_error'))}"
        f"    自助法副本: {report.get('replicates', 0)}",
    ]
    if report.get('contrast'):
        lines.append("对比: " + ", ".join(f"{k}={v}" for k, v in report['contrast'].items()))
    coefficients = report.get('coefficients') or {}
    if coefficients:
        se = report.get('coefficient_se') or {}
        rows = [[name, value, se.get(name)] for name, value in coefficients.items()]
        lines.append(format_table(["项", "系数", "标准误"], rows))
    for note in report.get('notes') or []:
        lines.append(f"注: {note}")
    return "\n".join(lines)


def format_summary(summary: Dict[str, Any]) -> str:
    """蒙特卡洛汇总表（MCSummary.to_dict() 的结果）"""
    headers = ["估计器", "真值", "均值", "偏差", "标准差", "RMSE", "成功", "失败", "拒绝率"]
    rows = []
    for name, s in summary.get('estimators', {}).items():
        rows.append([
            name, s.get('oracle'), s.get('mean'), s.get('bias'), s.get('sd'), s.get('rmse'),
            s.get('successes'), s.get('failures'), s.get('rejection_rate'),
        ])
    header = f"副本数: {summary.get('replicates')}    配置摘要: {summary.get('config_digest')}"
    return header + "\n" + format_table(headers, rows)


def format_error_message(error: Exception, context: Optional[str] = None) -> str:
    """
    格式化错误消息

    Args:
        error: 异常对象
        context: 错误上下文

    Returns:
        格式化的错误消息
    """
    error_type = type(error).__name__
    code = getattr(error, 'code', None)
    label = f"{error_type}/{code}" if code else error_type
    if context:
        return f"错误 ({context}) [{label}]: {error}"
    return f"错误 [{label}]: {error}"
