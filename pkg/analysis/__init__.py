"""
分析模块包
包含情景生成、因子模型、去混杂估计、参数化识别、工具变量、随机干预与蒙特卡洛实验
"""
