"""
deconf - 多处理变量在未观测混杂下的因果效应估计
去混杂器及其诊断，以及参数化、工具变量、随机干预三种替代识别途径
"""

__version__ = "1.0.0"
