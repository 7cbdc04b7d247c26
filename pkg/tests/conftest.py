"""测试公共设施：日志目录重定向、慢测试开关、常用情景"""

import os
import tempfile

# 必须在导入项目模块之前设置，避免测试把日志写进仓库目录
os.environ.setdefault("DECONF_LOG_DIR", os.path.join(tempfile.gettempdir(), "deconf-test-logs"))

import numpy as np
import pytest

from core.models import Dataset, ScenarioSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="运行标记为 slow 的验收实验")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="需要 --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def fig1_spec():
    return ScenarioSpec.default("Fig1", n=2000, seed=7)


@pytest.fixture
def tiny_iv_dataset():
    """两水平单处理：P = [[.75,.25],[.25,.75]]，E(Y|W) = (1, 2)"""
    treatments = np.array([[1], [0], [0], [0], [1], [1], [1], [0]])
    instrument = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    outcome = np.array([1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0])
    return Dataset(treatments=treatments, outcome=outcome, instrument=instrument, instrument_levels=2)
