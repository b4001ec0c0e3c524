"""模型训练工具 - train 阶段：VGNN 与两个树集成基线"""

import time
from typing import Any

from ...services.artifacts import (
    ArtifactLayout,
    load_id_set,
    require,
    stage_lock,
    write_csv,
    write_json,
    write_manifest,
)
from ...services.baselines import fit_baseline, save_baseline
from ...services.error_utils import ConfigError, format_response
from ...services.evaluation import MODELS, REGIMES
from ...services.pipeline_config import PipelineConfig
from ...services.relations import Vocabulary
from ...services.trainer import train
from ...services.vgnn import save_model
from ..registry import StageRegistry

TIMING_FILE = "timing.json"


def available_regimes(layout: ArtifactLayout, scenario_id: int) -> list[str]:
    """matched 必须存在；subset 仅在 match 阶段抽取过时存在"""
    require(layout.ids_path(scenario_id, "matched"), "match")
    return [r for r in REGIMES if layout.ids_path(scenario_id, r).exists()]


def register_train_tools(registry: StageRegistry, services: dict[str, Any], logger: Any) -> None:
    """注册 train 阶段"""
    config: PipelineConfig = services["config"]
    layout: ArtifactLayout = services["layout"]
    config_info: dict[str, Any] = services["config_info"]

    def fit_one(model: str, scenario_id: int, regime: str, vocab: Vocabulary) -> dict[str, Any]:
        samples = load_id_set(layout, scenario_id, regime)
        inputs = [
            layout.vocabulary_path,
            *layout.cohort_paths(scenario_id),
            layout.ids_path(scenario_id, regime),
        ]
        started = time.perf_counter()
        with stage_lock(layout.model_dir(scenario_id, regime, model), logger) as directory:
            path = layout.model_path(scenario_id, regime, model)
            outputs = [path]
            details: dict[str, Any] = {"scenario": scenario_id, "regime": regime, "n_train": len(samples)}
            if model == "vgnn":
                result = train(samples, vocab, config.train, config.threads, logger)
                save_model(path, result.model, vocab)
                outputs.append(write_csv(result.history_frame(), directory / "training_log.csv"))
                details.update({"n_fit": result.n_train, "n_val": result.n_val})
            else:
                section = config.forest if model == "rf" else config.boosting
                baseline = fit_baseline(model, samples, vocab, section, config.threads, logger)
                save_baseline(path, baseline)
            wall_seconds = round(time.perf_counter() - started, 3)
            # 耗时单独存放，manifest 保持可复现
            write_json({"wall_seconds": wall_seconds}, directory / TIMING_FILE)
            write_manifest(directory, f"train {model}", config_info, inputs, outputs, details)
        logger.info(f"场景 {scenario_id} / {regime}: {model} 训练完成，耗时 {wall_seconds}s")
        return {"n_train": len(samples), "wall_seconds": wall_seconds}

    @registry.tool("train", description="在 matched 与 subset 训练队列上训练 vgnn / rf / gbm")
    def train_models(model: str) -> dict[str, Any]:
        """训练指定模型

        Args:
            model: vgnn、rf 或 gbm

        Returns:
            每个场景与队列方案的训练规模和耗时

        """
        if model not in MODELS:
            raise ConfigError("unknown_model", f"未知模型 {model!r}，可选: {', '.join(MODELS)}")
        vocab = Vocabulary.load(require(layout.vocabulary_path, "ingest"))

        trained: dict[str, dict[str, Any]] = {}
        for scenario_id in config.scenarios:
            for regime in available_regimes(layout, scenario_id):
                trained[f"scenario_{scenario_id}/{regime}"] = fit_one(
                    model, scenario_id, regime, vocab
                )

        return format_response(True, data={"model": model, "trained": trained}, operation="train")
