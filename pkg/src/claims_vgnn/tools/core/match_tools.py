"""划分与匹配工具 - match 阶段"""

from typing import Any

from ...services.artifacts import (
    ArtifactLayout,
    require,
    stage_lock,
    write_csv,
    write_ids,
    write_json,
    write_manifest,
)
from ...services.cohort import load_samples
from ...services.error_utils import format_response
from ...services.matching import (
    balance_report,
    fit_propensity,
    match_one_to_one,
    split,
    subset,
)
from ...services.pipeline_config import PipelineConfig
from ..registry import StageRegistry


def register_match_tools(registry: StageRegistry, services: dict[str, Any], logger: Any) -> None:
    """注册 match 阶段"""
    config: PipelineConfig = services["config"]
    layout: ArtifactLayout = services["layout"]
    config_info: dict[str, Any] = services["config_info"]

    @registry.tool("match", description="留出测试集，拟合倾向评分，1:1 匹配训练队列并可选抽取固定规模子集")
    def match_cohorts() -> dict[str, Any]:
        """每个场景写出 id 清单、matched.csv、balance.json 与 propensity.json"""
        summary: dict[int, dict[str, Any]] = {}
        for scenario_id in config.scenarios:
            cohort_path, codes_path = layout.cohort_paths(scenario_id)
            inputs = [require(cohort_path, "cohort"), require(codes_path, "cohort")]
            samples = load_samples(cohort_path, codes_path)

            train_pool, test_set = split(samples, config.split)
            propensity = fit_propensity(train_pool, config.match.max_iterations, logger)
            scores = propensity.score(train_pool)
            matched = match_one_to_one(train_pool, scores, config.match, logger)

            regimes = {"matched": matched.samples}
            if config.match.subset_per_class is not None:
                regimes["subset"] = subset(
                    matched.samples, config.match.subset_per_class, config.match.seed
                )

            balance = balance_report(train_pool, matched.samples)
            with stage_lock(layout.match_dir(scenario_id), logger) as directory:
                outputs = [
                    write_ids([s.patient_id for s in train_pool], layout.ids_path(scenario_id, "train_pool")),
                    write_ids([s.patient_id for s in test_set], layout.ids_path(scenario_id, "test")),
                    write_csv(matched.to_frame(), directory / "matched.csv"),
                    write_json(balance, directory / "balance.json"),
                    write_json(
                        {
                            "coefficients": propensity.coefficients.tolist(),
                            "age_mean": propensity.age_mean,
                            "age_std": propensity.age_std,
                            "caliper_width": matched.caliper_width,
                            "diagnostics": propensity.diagnostics,
                        },
                        directory / "propensity.json",
                    ),
                ]
                for regime, members in regimes.items():
                    outputs.append(
                        write_ids([s.patient_id for s in members], layout.ids_path(scenario_id, regime))
                    )
                if "subset" not in regimes:
                    layout.ids_path(scenario_id, "subset").unlink(missing_ok=True)
                write_manifest(
                    directory,
                    "match",
                    config_info,
                    inputs=inputs,
                    outputs=outputs,
                    extra={
                        "scenario": scenario_id,
                        "regimes": sorted(regimes),
                        "unmatched_cases": len(matched.unmatched_cases),
                    },
                )

            logger.info(
                f"场景 {scenario_id}: 训练池 {len(train_pool)}, 测试集 {len(test_set)}, "
                f"匹配 {len(matched.pairs)} 对, SMD(age) {balance['before']['smd_age']:.3f} -> "
                f"{balance['after']['smd_age']:.3f}"
            )
            summary[scenario_id] = {
                "train_pool": len(train_pool),
                "test": len(test_set),
                "pairs": len(matched.pairs),
                "match_rate": round(matched.match_rate, 4),
                "regimes": {regime: len(members) for regime, members in regimes.items()},
            }

        return format_response(True, data={"scenarios": summary}, operation="match")
