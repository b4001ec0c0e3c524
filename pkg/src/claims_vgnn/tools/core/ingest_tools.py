"""摄取工具 - ingest 阶段：读取理赔数据并映射到编码分组"""

from pathlib import Path
from typing import Any

from ...services.artifacts import (
    ArtifactLayout,
    require,
    stage_lock,
    write_csv,
    write_json,
    write_manifest,
)
from ...services.domain import (
    CASE_DEFINITION_COLUMNS,
    code_map_to_frame,
    load_case_definition,
    load_code_map,
    load_timelines,
    map_timelines,
    read_table,
    timelines_to_frames,
)
from ...services.error_utils import format_response
from ...services.pipeline_config import PipelineConfig
from ...services.relations import Vocabulary
from ..registry import StageRegistry


def source_paths(config: PipelineConfig, layout: ArtifactLayout) -> dict[str, Path]:
    """原始数据位置：配置了 generator 时取 generate 的输出，否则取 paths 段"""
    if config.generator is not None:
        data = layout.data_dir
        paths = {
            "patients": data / "patients.csv",
            "claims": data / "claims.csv",
            "code_map": data / "code_map.csv",
            "case_definition": data / "case_definition.csv",
        }
        for path in paths.values():
            require(path, "generate")
        return paths
    return {
        "patients": Path(str(config.paths.patients)),
        "claims": Path(str(config.paths.claims)),
        "code_map": Path(str(config.paths.code_map)),
        "case_definition": config.paths.case_definition_path,
    }


def register_ingest_tools(registry: StageRegistry, services: dict[str, Any], logger: Any) -> None:
    """注册 ingest 阶段"""
    config: PipelineConfig = services["config"]
    layout: ArtifactLayout = services["layout"]
    config_info: dict[str, Any] = services["config_info"]

    @registry.tool("ingest", description="读取 patients/claims，按编码分组表映射，写出映射结果与摄取报告")
    def ingest_claims() -> dict[str, Any]:
        """映射原始编码；未映射编码保留在 claims_mapped.csv 中但 group 为空"""
        sources = source_paths(config, layout)
        code_map = load_code_map(sources["code_map"])
        # 提前校验病例定义格式，cohort 阶段读取的是这里复制的版本
        load_case_definition(sources["case_definition"])
        definition_frame = read_table(sources["case_definition"], CASE_DEFINITION_COLUMNS)

        timelines = load_timelines(sources["patients"], sources["claims"], logger)
        mapped, report = map_timelines(timelines, code_map, logger)
        patients, claims = timelines_to_frames(mapped, include_group=True)
        vocab = Vocabulary.from_code_map(code_map)

        with stage_lock(layout.ingest_dir, logger) as directory:
            outputs = [
                write_csv(patients, layout.patients_path),
                write_csv(claims, layout.mapped_claims_path),
                write_csv(vocab.to_frame(), layout.vocabulary_path),
                write_csv(definition_frame, layout.case_definition_path),
                write_csv(code_map_to_frame(code_map), directory / "code_map.csv"),
                write_json(report.to_dict(), directory / "ingest_report.json"),
            ]
            write_manifest(
                directory,
                "ingest",
                config_info,
                inputs=list(sources.values()),
                outputs=outputs,
                extra={"vocabulary_size": len(vocab)},
            )

        return format_response(
            True,
            data={"report": report.to_dict(), "vocabulary_size": len(vocab)},
            operation="ingest",
        )
