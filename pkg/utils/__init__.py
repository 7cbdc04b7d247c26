"""
Utils包 - 工具模块
包含日志管理、格式化工具、配置验证器和系统资源快照
"""
