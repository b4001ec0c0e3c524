"""评估工具 - evaluate 阶段：留出测试集 AUROC 与结果表"""

from pathlib import Path
from typing import Any

import numpy as np

from ...services.artifacts import (
    ArtifactLayout,
    MANIFEST_FILE,
    load_id_set,
    read_json,
    stage_lock,
    write_csv,
    write_manifest,
)
from ...services.baselines import load_baseline
from ...services.cohort import CohortSample
from ...services.error_utils import MissingArtifactError, format_response
from ...services.evaluation import (
    MODELS,
    REGIMES,
    ResultRow,
    auroc,
    plot_auroc_bars,
    scenario_report,
    text_summary,
)
from ...services.pipeline_config import PipelineConfig
from ...services.trainer import build_graphs
from ...services.vgnn import load_model, predict
from ..registry import StageRegistry
from .train_tools import TIMING_FILE


def score_model(model: str, path: Path, samples: list[CohortSample], logger: Any) -> np.ndarray:
    """加载模型文件并对样本打分"""
    if model == "vgnn":
        network, vocab = load_model(path)
        return predict(network, build_graphs(samples, vocab, logger))
    return load_baseline(path).predict(samples)


def register_evaluate_tools(registry: StageRegistry, services: dict[str, Any], logger: Any) -> None:
    """注册 evaluate 阶段"""
    config: PipelineConfig = services["config"]
    layout: ArtifactLayout = services["layout"]
    config_info: dict[str, Any] = services["config_info"]

    @registry.tool("evaluate", description="在留出测试集上计算每个场景 × 模型 × 队列方案的 AUROC")
    def evaluate_models() -> dict[str, Any]:
        """写出 results.csv 与 summary.txt；未训练的组合记为 absent"""
        rows: list[ResultRow] = []
        inputs: list[Path] = []
        for scenario_id in config.scenarios:
            test_set = load_id_set(layout, scenario_id, "test")
            labels = np.array([s.label for s in test_set])
            inputs.append(layout.ids_path(scenario_id, "test"))
            for model in MODELS:
                for regime in REGIMES:
                    path = layout.model_path(scenario_id, regime, model)
                    if not path.exists():
                        continue
                    directory = layout.model_dir(scenario_id, regime, model)
                    manifest = read_json(directory / MANIFEST_FILE, f"train {model}")
                    wall_seconds = None
                    if (directory / TIMING_FILE).exists():
                        wall_seconds = read_json(directory / TIMING_FILE, f"train {model}")["wall_seconds"]
                    value = auroc(score_model(model, path, test_set, logger), labels)
                    rows.append(
                        ResultRow(
                            scenario=scenario_id,
                            model=model,
                            regime=regime,
                            auroc=value,
                            n_train=int(manifest["details"]["n_train"]),
                            n_test=len(test_set),
                            wall_seconds=wall_seconds,
                        )
                    )
                    inputs.append(path)
                    logger.info(f"场景 {scenario_id} / {regime} / {model}: AUROC {value:.4f}")

        if not rows:
            first = layout.model_path(config.scenarios[0], "matched", "vgnn")
            raise MissingArtifactError(first, "train vgnn")

        frame = scenario_report(
            rows,
            scenarios=list(config.scenarios),
            record_wall_time=config.report.record_wall_time,
        )
        summary = text_summary(frame)

        evaluation_dir = layout.evaluation_dir()
        with stage_lock(evaluation_dir, logger) as directory:
            outputs = [write_csv(frame, layout.results_path)]
            layout.summary_path.write_text(summary, encoding="utf-8")
            outputs.append(layout.summary_path)
            if config.report.plot:
                image = plot_auroc_bars(frame, directory / "auroc.png", logger)
                if image is not None:
                    outputs.append(image)
            write_manifest(directory, "evaluate", config_info, inputs, outputs)

        return format_response(
            True,
            data={"results": str(layout.results_path), "rows": len(frame), "summary": summary},
            operation="evaluate",
        )
