"""
模块名称: main.py
功能描述: 命令行入口：simulate / fit / estimate / diagnose / mc

退出码：0 成功；1 用法、配置或数据错误；2 识别失败。
"""

import argparse
import asyncio
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import aiofiles
import pandas as pd
from dotenv import load_dotenv

# 添加项目根目录到Python路径
sys.path.insert(0, str(Path(__file__).parent))

from core.constants import (
    BOOTSTRAP_REPLICATES,
    CF_DEGREE,
    DATA_DIR,
    DIAGNOSTIC_ALPHA,
    EM_RESTARTS,
    ESTIMATOR_NAMES,
    EXIT_IDENTIFICATION,
    EXIT_OK,
    EXIT_USAGE,
    GOF_BOOTSTRAP,
    LOG_DIR,
    RESULTS_DIR,
    SCENARIO_IDS,
    WEIGHT_MODES,
)
from core.exceptions import (
    ConfigurationException,
    DeconfBaseException,
    FileOperationException,
    IdentificationException,
)
from core.models import BasisSpec, Dataset, FitConfig, LatentClassModel, ScenarioSpec, SIConfig, parse_pattern
from analysis.deconfounder import check_overlap_degeneracy, diagnose_conditional_independence, estimate_ate
from analysis.factor_model import FIG3_PARENTS, fit_em, fit_factorized, identifiability_precheck, load_model
from analysis.harness import emit_report, load_experiment, run_experiment, summary_json
from analysis.iv import estimate_control_function, estimate_iv
from analysis.parametric_id import estimate_additive, estimate_conditional_effects, naive_regression
from analysis.scenarios import generate, load_csv, load_scenario, save_csv
from analysis.stochastic_intervention import delta_from_factorized, estimate_delta, parse_distribution
from utils.formatters import format_duration, format_error_message, format_estimate, format_summary
from utils.logger import get_logger, setup_logger
from utils.validators import sanitize_filename, validate_contrast

logger = get_logger("deconf.cli")


class CLIParser(argparse.ArgumentParser):
    """用法错误以退出码 1 结束"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: 错误: {message}\n")
        sys.exit(EXIT_USAGE)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="随机种子")
    common.add_argument("--config", type=Path, default=None, help="TOML 配置文件（simulate 与 mc）")
    common.add_argument("--out", type=Path, default=None, help="输出路径")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="输出格式")
    common.add_argument("--log-level", default=None, help="日志级别（DEBUG/INFO/WARNING/ERROR）")
    return common


def build_parser() -> argparse.ArgumentParser:
    """构建命令行解析器"""
    common = _common_options()
    parser = CLIParser(prog="deconf", description="多处理去混杂：模拟、拟合、估计、诊断与蒙特卡洛实验")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=[common], help="按情景生成数据集 CSV")
    simulate.add_argument("--scenario", choices=SCENARIO_IDS, default="Fig1")
    simulate.add_argument("--n", type=int, default=None)

    fit = sub.add_parser("fit", parents=[common], help="拟合潜类别因子模型")
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--k", type=int, default=2)
    fit.add_argument("--restarts", type=int, default=EM_RESTARTS)
    fit.add_argument("--factorized", action="store_true", help="拟合 A2←A1、A3←A1 的分解模型（m=4）")

    estimate = sub.add_parser("estimate", parents=[common], help="估计因果效应")
    estimate.add_argument("--data", type=Path, required=True)
    estimate.add_argument(
        "--method", required=True,
        choices=[n for n in ESTIMATOR_NAMES if n != "diagnose"],
    )
    estimate.add_argument("--model", type=Path, default=None, help="已拟合模型 JSON（缺省时现场拟合）")
    estimate.add_argument("--k", type=int, default=2)
    estimate.add_argument("--restarts", type=int, default=EM_RESTARTS)
    estimate.add_argument("--contrast", default=None, help="对比 a:a′，如 111:000（cf 方法为实数 1:0）")
    estimate.add_argument("--sigma-known", type=float, default=None)
    estimate.add_argument("--factorized", action="store_true", help="parametric: 图 3 条件效应")
    estimate.add_argument("--p1", default=None, help="prod:<p1,...,pm> | table:<file.csv>")
    estimate.add_argument("--p0", default=None)
    estimate.add_argument("--weights", choices=WEIGHT_MODES, default="posterior")
    estimate.add_argument("--no-normalize", action="store_true", help="随机干预改用 1/n 归一化")
    estimate.add_argument("--truncation", type=float, default=None)
    estimate.add_argument("--levels", type=int, default=None)
    estimate.add_argument("--degree", type=int, default=CF_DEGREE)
    estimate.add_argument("--bootstrap", type=int, default=BOOTSTRAP_REPLICATES)

    diagnose = sub.add_parser("diagnose", parents=[common], help="条件独立 / 拟合优度诊断与重叠审计")
    diagnose.add_argument("--data", type=Path, required=True)
    diagnose.add_argument("--model", type=Path, default=None)
    diagnose.add_argument("--k", type=int, default=2)
    diagnose.add_argument("--restarts", type=int, default=EM_RESTARTS)
    diagnose.add_argument("--alpha", type=float, default=DIAGNOSTIC_ALPHA)
    diagnose.add_argument("--bootstrap-count", type=int, default=GOF_BOOTSTRAP)

    mc = sub.add_parser("mc", parents=[common], help="运行蒙特卡洛实验（需要 --config）")
    mc.add_argument("--workers", type=int, default=None)
    mc.add_argument("--replicates", type=int, default=None)

    return parser


def setup_directories() -> None:
    """创建必要的目录"""
    LOG_DIR.mkdir(parents=True, exist_ok=True)
    RESULTS_DIR.mkdir(parents=True, exist_ok=True)


async def write_output(text: str, out: Optional[Path]) -> None:
    """写入文件，未指定路径时打印到标准输出"""
    if out is None:
        sys.stdout.write(text)
        return
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(out, 'w', encoding='utf-8', newline='') as f:
            await f.write(text)
    except OSError as e:
        raise FileOperationException(f"无法写入输出: {e}", str(out))
    logger.info(f"输出已写入: {out}")


def _render(record: Dict[str, Any], fmt: str) -> str:
    if fmt == "csv":
        return pd.json_normalize(record, sep=".").to_csv(index=False, lineterminator="\n")
    return json.dumps(record, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


# ==================== 子命令 ====================

def _load_dataset(path: Path) -> Dataset:
    return load_csv(path)


def _treatment_model(args, dataset: Dataset, factorized: bool = False):
    model_path = getattr(args, "model", None)
    if model_path is not None:
        return load_model(model_path)
    config = FitConfig(restarts=args.restarts, seed=args.seed or 0)
    if factorized:
        return fit_factorized(dataset, FIG3_PARENTS, args.k, config)
    return fit_em(dataset, args.k, config)


def _binary_contrast(text: Optional[str], m: int):
    if text is None:
        return (1,) * m, (0,) * m
    ok, message = validate_contrast(text)
    if not ok:
        raise ConfigurationException(message, "contrast")
    a, a_prime = text.split(":")
    return parse_pattern(a, m), parse_pattern(a_prime, m)


def _real_contrast(text: Optional[str]):
    if text is None:
        return 1.0, 0.0
    try:
        a, a_prime = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigurationException("cf 对比格式应为 <a>:<a′>，如 1:0", "contrast")
    return a, a_prime


async def cmd_simulate(args) -> int:
    if args.config is not None:
        spec = load_scenario(args.config)
    else:
        spec = ScenarioSpec.default(args.scenario)
    overrides = {}
    if args.n is not None:
        overrides['n'] = args.n
    if args.seed is not None:
        overrides['seed'] = args.seed
    if overrides:
        spec = ScenarioSpec.from_dict({**spec.to_dict(), **overrides})
    dataset = generate(spec)
    out = args.out or DATA_DIR / sanitize_filename(f"{spec.scenario_id}_seed{spec.seed}.csv")
    save_csv(dataset, out)
    sys.stdout.write(f"{out}\n")
    return EXIT_OK


async def cmd_fit(args) -> int:
    dataset = _load_dataset(args.data)
    if args.factorized and dataset.m != 4:
        raise ConfigurationException("分解模型要求 m=4", "factorized")
    model = _treatment_model(args, dataset, factorized=args.factorized)
    if not args.factorized:
        check = identifiability_precheck(args.k, dataset.m, model)
        if not check.passed:
            logger.warning(f"可识别性预检未通过: {'; '.join(check.failures)}")
    await write_output(json.dumps(model.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


async def cmd_estimate(args) -> int:
    dataset = _load_dataset(args.data)
    seed = args.seed or 0
    method = args.method
    if method == "deconfounder":
        a, a_prime = _binary_contrast(args.contrast, dataset.m)
        report = estimate_ate(dataset, _treatment_model(args, dataset), a, a_prime, args.bootstrap, seed)
    elif method == "parametric" and args.factorized:
        if dataset.m != 4:
            raise ConfigurationException("条件效应估计要求 m=4", "factorized")
        fmodel = _treatment_model(args, dataset, factorized=True)
        report = estimate_conditional_effects(dataset, fmodel, replicates=args.bootstrap, seed=seed)
    elif method == "parametric":
        a, a_prime = (None, None) if args.contrast is None else _binary_contrast(args.contrast, dataset.m)
        report = estimate_additive(
            dataset, _treatment_model(args, dataset), BasisSpec(sigma_known=args.sigma_known),
            a=a, a_prime=a_prime, replicates=args.bootstrap, seed=seed,
        )
    elif method == "naive":
        a, a_prime = _binary_contrast(args.contrast, dataset.m)
        report = naive_regression(dataset, a, a_prime, args.bootstrap, seed)
    elif method == "iv":
        a, a_prime = _binary_contrast(args.contrast, dataset.m)
        report = estimate_iv(dataset, a, a_prime, levels=args.levels, replicates=args.bootstrap, seed=seed)
    elif method == "cf":
        a, a_prime = _real_contrast(args.contrast)
        report = estimate_control_function(dataset, a, a_prime, args.degree, args.bootstrap, seed)
    else:
        if args.p1 is None or args.p0 is None:
            raise ConfigurationException("随机干预需要 --p1 与 --p0", "p1")
        base_dir = args.data.parent
        config = SIConfig(
            p1=parse_distribution(args.p1, dataset.m, base_dir),
            p0=parse_distribution(args.p0, dataset.m, base_dir),
            weight_mode=args.weights,
            normalize=not args.no_normalize,
            truncation=args.truncation,
        )
        if method == "si_factorized":
            model = _treatment_model(args, dataset, factorized=True)
            report = delta_from_factorized(dataset, model, config, args.bootstrap, seed)
        else:
            report = estimate_delta(dataset, _treatment_model(args, dataset), config, args.bootstrap, seed)

    record = report.to_dict()
    logger.info("\n" + format_estimate(record))
    await write_output(_render(record, args.format), args.out)
    return EXIT_OK


async def cmd_diagnose(args) -> int:
    dataset = _load_dataset(args.data)
    model = _treatment_model(args, dataset)
    report = diagnose_conditional_independence(
        dataset, model, alpha=args.alpha, bootstrap_count=args.bootstrap_count, seed=args.seed or 0,
    )
    record = {
        'diagnostic': report.to_dict(),
        'overlap': check_overlap_degeneracy(dataset, model).to_dict(),
    }
    if isinstance(model, LatentClassModel):
        record['identifiability'] = identifiability_precheck(model.k, model.m, model).to_dict()
    await write_output(_render(record, args.format), args.out)
    return EXIT_OK


async def cmd_mc(args) -> int:
    if args.config is None:
        raise ConfigurationException("mc 需要 --config <实验 TOML>", "config")
    config = load_experiment(args.config)
    overrides = {
        key: value for key, value in (
            ('workers', args.workers), ('replicates', args.replicates), ('base_seed', args.seed),
        ) if value is not None
    }
    if overrides:
        config = replace(config, **overrides)

    started = time.perf_counter()
    summary = await run_experiment(config)
    logger.info(f"蒙特卡洛实验完成，用时 {format_duration(time.perf_counter() - started)}")
    out = args.out or (Path(config.output) if config.output else None)
    if out is None:
        if args.format == "csv":
            raise ConfigurationException("CSV 输出需要 --out 路径", "out")
        sys.stdout.write(summary_json(summary))
    else:
        await emit_report(summary, out, args.format)
        sys.stdout.write(format_summary(summary.to_dict()) + "\n")
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'fit': cmd_fit,
    'estimate': cmd_estimate,
    'diagnose': cmd_diagnose,
    'mc': cmd_mc,
}

# 只有这两个子命令读取 TOML
CONFIG_COMMANDS = ('simulate', 'mc')


async def run(args) -> int:
    """执行子命令并把异常映射为退出码"""
    try:
        if args.config is not None and args.command not in CONFIG_COMMANDS:
            raise ConfigurationException(
                f"{args.command} 不读取配置文件，--config 只适用于 {'/'.join(CONFIG_COMMANDS)}", "config"
            )
        return await COMMANDS[args.command](args)
    except IdentificationException as e:
        logger.error(format_error_message(e, args.command))
        sys.stderr.write(format_error_message(e, args.command) + "\n")
        return EXIT_IDENTIFICATION
    except DeconfBaseException as e:
        logger.error(format_error_message(e, args.command))
        sys.stderr.write(format_error_message(e, args.command) + "\n")
        return EXIT_USAGE


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logger(log_level=args.log_level)
    setup_directories()
    try:
        return asyncio.run(run(args))
    except KeyboardInterrupt:
        logger.info("收到中断信号，退出")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
