#!/usr/bin/env python3
"""claims-vgnn CLI入口点
每个子命令对应一个流水线阶段，run-all 依次执行全部阶段
"""

import argparse
import logging
import os
import re
import sys
from typing import Any

from .services.artifacts import ArtifactLayout
from .services.error_utils import EXIT_OK, EXIT_UNEXPECTED, ConfigError, get_error_handler
from .services.evaluation import MODELS
from .services.pipeline_config import CONFIG_ENV_VAR, PipelineConfig, get_config_manager
from .tools.registry import StageRegistry

# 设置编码环境，确保中文日志正确输出
os.environ["PYTHONIOENCODING"] = "utf-8"

STAGE_COMMANDS = ("generate", "ingest", "cohort", "match", "train", "evaluate", "explain", "run-all")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def safe_print(text: str) -> None:
    """安全打印函数，处理编码问题"""
    try:
        print(text)
    except UnicodeEncodeError:
        # 移除或替换非ASCII字符
        clean_text = re.sub(r"[^\x00-\x7F]+", "", text)
        print(clean_text)


def create_pipeline(
    config: PipelineConfig, config_info: dict[str, Any], logger: logging.Logger | None = None
) -> StageRegistry:
    """创建流水线注册表 - 注册全部阶段并挂载中间件"""
    from .middleware import LoggingMiddleware, PipelineErrorHandlingMiddleware, TimingMiddleware
    from .tools.core import (
        register_cohort_tools,
        register_evaluate_tools,
        register_explain_tools,
        register_generate_tools,
        register_ingest_tools,
        register_match_tools,
        register_run_all_tools,
        register_train_tools,
    )

    logger = logger or logging.getLogger(__name__)
    registry = StageRegistry("claims-vgnn", logger)

    # 添加中间件
    registry.add_middleware(PipelineErrorHandlingMiddleware(logger))
    registry.add_middleware(LoggingMiddleware(logger))
    registry.add_middleware(TimingMiddleware())

    # 各阶段共享的依赖
    services = {
        "config": config,
        "config_info": config_info,
        "layout": ArtifactLayout(config.output_dir),
    }
    register_generate_tools(registry, services, logger)
    register_ingest_tools(registry, services, logger)
    register_cohort_tools(registry, services, logger)
    register_match_tools(registry, services, logger)
    register_train_tools(registry, services, logger)
    register_evaluate_tools(registry, services, logger)
    register_explain_tools(registry, services, logger)
    register_run_all_tools(registry, services, logger)
    return registry


def show_info(config_info: dict[str, Any], registry: StageRegistry) -> None:
    """显示解析后的配置与可用阶段"""
    safe_print("claims-vgnn 理赔数据疾病风险预测流水线")
    safe_print("=" * 60)
    safe_print(f"配置哈希: {config_info['config_hash']}")
    safe_print(f"场景: {', '.join(str(s) for s in config_info['scenarios'])}")
    safe_print(f"输出目录: {config_info['output_dir']}")
    safe_print(f"合成数据: {'是' if config_info['synthetic'] else '否'}")
    safe_print("\n[模块种子]:")
    for module, seed in config_info["seeds"].items():
        safe_print(f"  {module:<9} {seed}")
    safe_print("\n[阶段]:")
    for stage in registry.stages:
        safe_print(f"  {stage:<9} {registry.describe(stage)}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON 配置文件 (默认读取环境变量 {CONFIG_ENV_VAR})")
    common.add_argument(
        "--scenario", choices=["1", "2", "3", "all"], help="只运行指定场景 (默认: 配置中的全部场景)"
    )
    common.add_argument("--seed", type=int, help="全局种子 (64 位无符号整数)")
    common.add_argument("--threads", type=int, help="阶段内并行的最大线程数")
    common.add_argument("--output", help="输出目录 (覆盖 paths.output_dir)")
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="日志级别 (默认: INFO)",
    )

    parser = argparse.ArgumentParser(
        prog="claims-vgnn",
        description="claims-vgnn 理赔数据疾病风险预测流水线",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用示例:
  claims-vgnn run-all --config json/demo_config.json      # 合成数据上运行全流程
  claims-vgnn train vgnn --config cfg.json --scenario 2   # 只训练场景 2 的 VGNN
  claims-vgnn evaluate --config cfg.json                  # 计算 AUROC 并写出 results.csv
  claims-vgnn info --config cfg.json                      # 显示解析后的配置与种子

退出码: 0 成功, 1 非预期错误, 2 配置错误, 3 数据错误, 4 数值错误
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True, help="可用命令")
    subparsers.add_parser("generate", parents=[common], help="生成合成理赔数据集")
    subparsers.add_parser("ingest", parents=[common], help="读取理赔数据并映射编码分组")
    subparsers.add_parser("cohort", parents=[common], help="按场景构建带标签的队列")
    subparsers.add_parser("match", parents=[common], help="留出测试集并构建匹配训练队列")
    train_parser = subparsers.add_parser("train", parents=[common], help="训练模型")
    train_parser.add_argument("model", choices=MODELS, help="要训练的模型")
    subparsers.add_parser("evaluate", parents=[common], help="计算测试集 AUROC")
    subparsers.add_parser("explain", parents=[common], help="计算关系重要性")
    subparsers.add_parser("run-all", parents=[common], help="依次运行全部阶段")
    subparsers.add_parser("info", parents=[common], help="显示解析后的配置")
    return parser


def main(argv: list[str] | None = None) -> int:
    """主函数，返回进程退出码"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, force=True)
    logger = logging.getLogger("claims_vgnn")

    try:
        manager = get_config_manager(logger)
        config = manager.load(
            args.config,
            scenario=args.scenario,
            seed=args.seed,
            threads=args.threads,
            output=args.output,
        )
        config_info = manager.get_config_info(config)
    except ConfigError as e:
        result = get_error_handler(logger).handle("config", e)
        return int(result["exit_code"])

    registry = create_pipeline(config, config_info, logger)
    if args.command == "info":
        show_info(config_info, registry)
        return EXIT_OK

    arguments = {"model": args.model} if args.command == "train" else {}
    try:
        result = registry.call(args.command, **arguments)
    except KeyboardInterrupt:
        safe_print("\n已中断")
        return EXIT_UNEXPECTED

    if result.get("success"):
        summary = result.get("data", {}).get("summary")
        if summary:
            safe_print(summary.rstrip("\n"))
        safe_print(f"{args.command} 完成，耗时 {result.get('processing_time', 0)}s")
    else:
        safe_print(f"{args.command} 失败: {result.get('error')}")
    return int(result.get("exit_code", EXIT_UNEXPECTED if not result.get("success") else EXIT_OK))


if __name__ == "__main__":
    sys.exit(main())
