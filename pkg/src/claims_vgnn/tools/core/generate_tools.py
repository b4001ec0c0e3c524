"""合成数据生成工具 - generate 阶段"""

from typing import Any

from ...services.artifacts import ArtifactLayout, stage_lock, write_manifest
from ...services.datagen import build_code_map, generate, write_dataset
from ...services.domain import CASE_DEFINITION_COLUMNS, load_case_definition, read_table
from ...services.error_utils import ConfigError, format_response
from ...services.pipeline_config import PipelineConfig
from ..registry import StageRegistry


def register_generate_tools(registry: StageRegistry, services: dict[str, Any], logger: Any) -> None:
    """注册 generate 阶段（闭包捕获配置与产物布局）"""
    config: PipelineConfig = services["config"]
    layout: ArtifactLayout = services["layout"]
    config_info: dict[str, Any] = services["config_info"]

    @registry.tool(
        "generate",
        description="按 generator 配置生成合成理赔数据集（patients/claims/ground_truth/code_map）",
    )
    def generate_dataset() -> dict[str, Any]:
        """生成合成数据集并写入 <output>/data"""
        generator = config.generator
        if generator is None:
            raise ConfigError("generator_not_configured", "配置文件中没有 generator 段，无法生成数据")

        case_definition_path = config.paths.case_definition_path
        definition = load_case_definition(case_definition_path)
        definition_frame = read_table(case_definition_path, CASE_DEFINITION_COLUMNS)

        timelines, truth = generate(generator, threads=config.threads, logger=logger)
        code_map = build_code_map(generator, definition)

        with stage_lock(layout.data_dir, logger) as directory:
            paths = write_dataset(directory, timelines, truth, code_map, definition_frame)
            write_manifest(
                directory,
                "generate",
                config_info,
                inputs=[case_definition_path],
                outputs=list(paths.values()),
                extra={
                    "patients": len(timelines),
                    "cases": truth.n_cases,
                    "vocabulary_size": generator.vocabulary_size,
                },
            )

        logger.info(f"合成数据已写入 {layout.data_dir}: {len(timelines)} 名患者")
        return format_response(
            True,
            data={
                "patients": len(timelines),
                "cases": truth.n_cases,
                "files": {name: str(path) for name, path in paths.items()},
            },
            operation="generate",
        )
