"""队列构建工具 - cohort 阶段"""

from typing import Any

from ...services.artifacts import ArtifactLayout, require, stage_lock, write_csv, write_manifest
from ...services.cohort import build_cohort, cohort_to_frames
from ...services.domain import load_case_definition, load_timelines
from ...services.error_utils import format_response
from ...services.pipeline_config import PipelineConfig
from ..registry import StageRegistry


def register_cohort_tools(registry: StageRegistry, services: dict[str, Any], logger: Any) -> None:
    """注册 cohort 阶段"""
    config: PipelineConfig = services["config"]
    layout: ArtifactLayout = services["layout"]
    config_info: dict[str, Any] = services["config_info"]

    @registry.tool("cohort", description="按场景窗口与纳入标准构建带标签的队列，并统计排除原因")
    def build_cohorts() -> dict[str, Any]:
        """对每个配置的场景写出 cohort.csv / cohort_codes.csv / exclusions.csv / cohort_counts.csv"""
        inputs = [
            require(layout.patients_path, "ingest"),
            require(layout.mapped_claims_path, "ingest"),
            require(layout.case_definition_path, "ingest"),
        ]
        timelines = load_timelines(layout.patients_path, layout.mapped_claims_path, logger)
        definition = load_case_definition(layout.case_definition_path)

        counts: dict[int, dict[str, int]] = {}
        for scenario_id in config.scenarios:
            cohort = build_cohort(
                timelines, definition, config.scenario(scenario_id), config.threads, logger
            )
            frames = cohort_to_frames(cohort)
            with stage_lock(layout.scenario_dir(scenario_id), logger) as directory:
                outputs = [write_csv(frame, directory / f"{name}.csv") for name, frame in frames.items()]
                write_manifest(
                    directory,
                    "cohort",
                    config_info,
                    inputs=inputs,
                    outputs=outputs,
                    extra={"scenario": scenario_id},
                )
            counts[scenario_id] = {
                "cases": cohort.n_cases,
                "controls": cohort.n_controls,
                **cohort.exclusion_report,
            }

        return format_response(True, data={"scenarios": counts}, operation="cohort")
