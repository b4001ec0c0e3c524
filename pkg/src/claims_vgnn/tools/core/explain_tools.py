"""关系重要性工具 - explain 阶段"""

from typing import Any

from ...services.artifacts import (
    ArtifactLayout,
    load_id_set,
    require,
    stage_lock,
    write_csv,
    write_manifest,
)
from ...services.error_utils import format_response
from ...services.explain import ExplanationReport, explain_cohort, permutation_null
from ...services.pipeline_config import PipelineConfig
from ...services.vgnn import load_model
from ..registry import StageRegistry


def null_pairs(config: PipelineConfig, report: ExplanationReport) -> list[tuple[str, str]]:
    """置换检验的目标关系：合成数据用植入的编码对，否则用排名前 k 的正向关系"""
    if config.generator is not None and config.generator.planted_pairs:
        vocab = report.w.vocab
        return [
            (p.group_a, p.group_b)
            for p in config.generator.planted_pairs
            if p.group_a in vocab and p.group_b in vocab
        ]
    return [(r.group_a, r.group_b) for r in report.positive]


def register_explain_tools(registry: StageRegistry, services: dict[str, Any], logger: Any) -> None:
    """注册 explain 阶段"""
    config: PipelineConfig = services["config"]
    layout: ArtifactLayout = services["layout"]
    config_info: dict[str, Any] = services["config_info"]

    @registry.tool("explain", description="由 matched 队列上 VGNN 的邻接矩阵计算权重差矩阵 W 与 top-k 关系")
    def explain_relations() -> dict[str, Any]:
        """每个场景写出 W.csv、vocabulary.csv、relations_top.csv 与 permutation_null.csv"""
        tables: dict[int, list[dict[str, Any]]] = {}
        for scenario_id in config.scenarios:
            model_path = require(layout.model_path(scenario_id, "matched", "vgnn"), "train vgnn")
            model, vocab = load_model(model_path)
            samples = load_id_set(layout, scenario_id, "matched")
            report = explain_cohort(model, samples, vocab, config.explain, logger)

            inputs = [model_path, *layout.cohort_paths(scenario_id), layout.ids_path(scenario_id, "matched")]
            with stage_lock(layout.explain_dir(scenario_id), logger) as directory:
                outputs = [
                    write_csv(report.w.triplets(), directory / "W.csv"),
                    write_csv(vocab.to_frame(), directory / "vocabulary.csv"),
                    write_csv(report.relations_frame(), directory / "relations_top.csv"),
                ]
                if config.explain.permutations > 0:
                    null = permutation_null(report, null_pairs(config, report), config.explain)
                    outputs.append(write_csv(null, directory / "permutation_null.csv"))
                write_manifest(
                    directory,
                    "explain",
                    config_info,
                    inputs,
                    outputs,
                    extra={"scenario": scenario_id, "patients": len(samples)},
                )
            tables[scenario_id] = report.relations_frame().to_dict(orient="records")

        return format_response(True, data={"relations": tables}, operation="explain")
