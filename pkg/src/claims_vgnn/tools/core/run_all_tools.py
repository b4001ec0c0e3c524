"""全流程工具 - run-all 依次执行全部阶段"""

from typing import Any

from ...services.error_utils import format_response
from ...services.evaluation import MODELS
from ...services.pipeline_config import PipelineConfig
from ..registry import StageRegistry


def pipeline_steps(config: PipelineConfig) -> list[tuple[str, dict[str, Any]]]:
    """阶段顺序；未配置 generator 时跳过 generate"""
    steps: list[tuple[str, dict[str, Any]]] = []
    if config.generator is not None:
        steps.append(("generate", {}))
    steps.extend([("ingest", {}), ("cohort", {}), ("match", {})])
    steps.extend(("train", {"model": model}) for model in MODELS)
    steps.extend([("evaluate", {}), ("explain", {})])
    return steps


def register_run_all_tools(registry: StageRegistry, services: dict[str, Any], logger: Any) -> None:
    """注册 run-all"""
    config: PipelineConfig = services["config"]

    @registry.tool("run-all", description="依次运行 generate、ingest、cohort、match、train、evaluate、explain")
    def run_all() -> dict[str, Any]:
        """任何阶段失败即停止，并原样返回该阶段的错误响应"""
        completed: list[str] = []
        for stage, arguments in pipeline_steps(config):
            result = registry.call(stage, **arguments)
            if not result.get("success", False):
                result.setdefault("context", {})["completed"] = completed
                return result
            completed.append(" ".join([stage, *arguments.values()]))
        logger.info(f"全流程完成: {', '.join(completed)}")
        return format_response(True, data={"completed": completed}, operation="run-all")
