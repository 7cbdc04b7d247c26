"""
Core包 - 核心功能模块
包含数据模型、异常处理、常量定义、随机数派生和线性代数工具
"""
