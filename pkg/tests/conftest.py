"""pytest 配置和共享 fixtures"""

import json
import logging
import sys
from datetime import date
from pathlib import Path

import pytest

# 添加src目录到Python路径
project_root = Path(__file__).parent.parent
src_path = project_root / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from claims_vgnn.resources import default_case_definition_path, sample_code_map_path  # noqa: E402
from claims_vgnn.services.datagen import GeneratorConfig, PlantedPair, generate  # noqa: E402
from claims_vgnn.services.domain import load_case_definition, load_code_map  # noqa: E402
from claims_vgnn.services.pipeline_config import reset_config_cache  # noqa: E402
from claims_vgnn.services.relations import Vocabulary  # noqa: E402


@pytest.fixture
def logger():
    """提供测试用的 logger"""
    logger = logging.getLogger("test")
    logger.setLevel(logging.WARNING)
    return logger


@pytest.fixture(autouse=True)
def fresh_config_manager():
    """每个测试使用新的全局配置管理器"""
    reset_config_cache()
    yield
    reset_config_cache()


@pytest.fixture
def case_definition():
    """内置的 ADRD 病例定义"""
    return load_case_definition(default_case_definition_path())


@pytest.fixture
def sample_code_map():
    """内置的示例编码分组表"""
    return load_code_map(sample_code_map_path())


@pytest.fixture
def small_vocab():
    return Vocabulary(
        groups=("A", "B", "C", "D", "E", "F"),
        labels={"A": "alpha", "B": "beta", "C": "gamma", "D": "delta", "E": "epsilon", "F": "zeta"},
    )


@pytest.fixture
def small_generator_config():
    """小规模合成数据配置：一个强植入关系"""
    return GeneratorConfig(
        n_patients=160,
        case_fraction=0.5,
        n_groups={"Diagnosis": 8, "Procedure": 6, "Medication": 6},
        planted_pairs=[PlantedPair("DX001", "RX002", 0.9, 0.0)],
        visits_per_year=8.0,
        codes_per_visit=(3, 5),
        span=(date(2007, 1, 1), date(2019, 12, 31)),
        signal_window_years=6,
        seed=11,
    )


@pytest.fixture
def generated(small_generator_config):
    """(timelines, ground_truth)"""
    return generate(small_generator_config)


@pytest.fixture
def tiny_pipeline_config(tmp_path):
    """可在几秒内跑完全流程的配置文件"""
    config = {
        "seed": 5,
        "threads": 1,
        "scenarios": [1],
        "paths": {"output_dir": str(tmp_path / "output")},
        "generator": {
            "n_patients": 120,
            "n_groups": {"Diagnosis": 6, "Procedure": 4, "Medication": 4},
            "planted_pairs": [
                {"group_a": "DX001", "group_b": "RX002", "p_case": 0.9, "p_control": 0.0}
            ],
            "visits_per_year": 8.0,
            "codes_per_visit": [3, 5],
            "signal_window_years": 6,
        },
        "match": {"caliper": 0.5, "subset_per_class": 10},
        "train": {
            "learning_rate": 0.01,
            "batch_size": 16,
            "epochs": 2,
            "embed_dim": 4,
            "layers": 1,
            "val_fraction": 0.0,
        },
        "forest": {"n_trees": 5, "max_depth": 3},
        "boosting": {"n_trees": 5, "max_depth": 2},
        "explain": {"top_k": 3, "permutations": 2},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path
