"""claims-vgnn 服务层
包含数据模型、队列构建、模型训练与评估等全部业务逻辑
"""

from .baselines import BaselineModel, TreeEnsembleConfig, fit_baseline
from .cohort import Cohort, CohortSample, ScenarioConfig, build_cohort

# 导入核心服务
from .datagen import GeneratorConfig, PlantedPair, SyntheticClaimsGenerator
from .domain import (
    CaseDefinition,
    CodeMap,
    PatientTimeline,
    load_case_definition,
    load_code_map,
    load_timelines,
    map_timelines,
)
from .error_utils import (
    ConfigError,
    ConfigValidationError,
    DataError,
    MissingArtifactError,
    NumericalError,
    PipelineError,
)
from .evaluation import auroc, scenario_report
from .explain import ExplainConfig, explain_cohort
from .matching import MatchConfig, SplitConfig, fit_propensity, match_one_to_one, split, subset
from .pipeline_config import PipelineConfig, PipelineConfigManager, get_config_manager
from .relations import RelationMatrix, Vocabulary
from .trainer import VGNNTrainer
from .vgnn import VGNN, TrainConfig

__all__ = [
    # 数据模型
    "CaseDefinition",
    "CodeMap",
    "PatientTimeline",
    "Cohort",
    "CohortSample",
    "Vocabulary",
    "RelationMatrix",
    # 配置
    "GeneratorConfig",
    "PlantedPair",
    "ScenarioConfig",
    "SplitConfig",
    "MatchConfig",
    "TrainConfig",
    "TreeEnsembleConfig",
    "ExplainConfig",
    "PipelineConfig",
    "PipelineConfigManager",
    "get_config_manager",
    # 核心服务
    "SyntheticClaimsGenerator",
    "VGNN",
    "VGNNTrainer",
    "BaselineModel",
    # 服务函数
    "load_case_definition",
    "load_code_map",
    "load_timelines",
    "map_timelines",
    "build_cohort",
    "split",
    "fit_propensity",
    "match_one_to_one",
    "subset",
    "fit_baseline",
    "explain_cohort",
    "auroc",
    "scenario_report",
    # 错误类型
    "PipelineError",
    "ConfigError",
    "ConfigValidationError",
    "DataError",
    "MissingArtifactError",
    "NumericalError",
]
