"""
模块名称: constants.py
功能描述: 全局常量和默认配置定义（数值容差、默认参数、路径、日志）
"""

import os
from pathlib import Path

# ===== 路径配置 =====
# 项目根目录（main.py所在目录）
PROJECT_ROOT = Path(__file__).parent.parent
# 数据目录
DATA_DIR = PROJECT_ROOT / "data"
# 日志目录
LOG_DIR = Path(os.environ.get("DECONF_LOG_DIR", DATA_DIR / "logs"))
# 结果目录
RESULTS_DIR = DATA_DIR / "results"
# 默认配置目录
CONFIG_DIR = PROJECT_ROOT / "configs"

# ===== 日志配置 =====
LOG_NAME = "deconf"
LOG_LEVEL = os.environ.get("DECONF_LOG_LEVEL", "WARNING")
LOG_TIMEZONE = os.environ.get("DECONF_LOG_TZ", "UTC")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
LOG_ROTATION = "midnight"
LOG_BACKUP_COUNT = 30

# ===== 数值容差 =====
PROB_SUM_TOL = 1e-12          # 概率表求和容差
PARAM_CLAMP_EPS = 1e-6        # 伯努利参数截断 ε
RANK_TOL = 1e-8               # 相对奇异值秩判定
COLLINEARITY_TOL = 1e-8       # 标准化设计矩阵最小奇异值阈值
EM_MONOTONE_SLACK = 1e-10     # EM 单调性容许误差
SUPPORT_THRESHOLD = 1e-10     # 随机干预支撑检查阈值
WEIGHT_FLOOR = 1e-12          # 权重分母下限
INFORMATIVE_THRESHOLD = 0.01  # 可识别性预检：处理信息量阈值

# ===== 因子模型（EM）默认值 =====
EM_MAX_ITER = 500
EM_TOL = 1e-8                 # 相对对数似然收敛容差
EM_RESTARTS = 10
EM_INIT_LOW = 0.05
EM_INIT_HIGH = 0.95
GOF_BOOTSTRAP_RESTARTS = 2    # 拟合优度自助法中每次重拟合的随机重启数（另加热启动）

# ===== 自助法 / 诊断默认值 =====
BOOTSTRAP_REPLICATES = 200
GOF_BOOTSTRAP = 199
DIAGNOSTIC_ALPHA = 0.05
MIN_EXPECTED_COUNT = 5.0

# ===== 枚举保护 =====
ENUMERATION_LIMIT = 20        # true_delta / 支撑检查 枚举 2^m 的上限
IV_PATTERN_LIMIT = 12         # 工具变量系统 2^m 上限
PATTERN_SAMPLING_LIMIT = 12   # 超过该 m 时按行采样而非多项分布采样

# ===== 控制函数默认值 =====
CF_DEGREE = 2
CF_BINS = 10
CF_COVERAGE = 0.8
CF_MIN_STRATUM = 2
CF_WARN_STRATUM = 10

# ===== 情景默认值 =====
DEFAULT_NOISE_SD = 1.0
DEFAULT_EDGE_STRENGTH = 1.0   # Fig3：A1 对 A2/A3 的对数几率偏移
DEFAULT_SHARED_STRENGTH = 1.0  # Fig2b：Z2 对 A1/A3 的对数几率偏移
DEFAULT_IV_STRENGTH = 2.0
DEFAULT_IV_LEVELS = 4
DEFAULT_CF_LEVELS = 10

# ===== 情景类型 =====
SCENARIO_IDS = ("Fig1", "Fig2a", "Fig2b", "Fig3", "IVBinary", "CFTriangular")

# ===== 估计方法 =====
ESTIMATOR_NAMES = (
    "deconfounder",
    "parametric",
    "naive",
    "iv",
    "cf",
    "si",
    "si_factorized",
    "diagnose",
)

# ===== 随机干预权重模式 =====
WEIGHT_MODES = ("oracle", "posterior")

# ===== 命令行退出码 =====
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IDENTIFICATION = 2
