"""流水线配置测试 - 解析、覆盖、种子派生与一次性校验"""

import hashlib
import json

import pytest

from claims_vgnn.services.error_utils import EXIT_CONFIG, ConfigValidationError
from claims_vgnn.services.pipeline_config import (
    CONFIG_ENV_VAR,
    PipelineConfigManager,
    config_hash,
    derive_seed,
    get_config_manager,
)


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestSeeds:
    """模块种子派生"""

    @pytest.mark.unit
    def test_derive_seed_definition(self):
        expected = int.from_bytes(hashlib.sha256(b"42:gnn").digest()[:8], "big")
        assert derive_seed(42, "gnn") == expected
        assert 0 <= derive_seed(42, "gnn") < 2**64

    @pytest.mark.unit
    def test_modules_get_distinct_seeds(self):
        config = PipelineConfigManager().build({"generator": {}, "seed": 9})
        seeds = config.seeds()
        module_seeds = [v for k, v in seeds.items() if k != "global"]
        assert len(set(module_seeds)) == len(module_seeds)
        assert config.train.seed == derive_seed(9, "gnn")
        assert config.generator.seed == derive_seed(9, "datagen")
        assert config.match.seed == derive_seed(9, "matching")

    @pytest.mark.unit
    def test_section_seed_rejected(self):
        with pytest.raises(ConfigValidationError) as exc:
            PipelineConfigManager().build({"generator": {}, "train": {"seed": 3}})
        assert any("train.seed" in p for p in exc.value.problems)


class TestBuild:
    """解析与覆盖"""

    @pytest.mark.unit
    def test_synthetic_defaults(self):
        config = PipelineConfigManager().build({"generator": {"n_patients": 50}})
        assert config.generator.n_patients == 50
        assert config.scenarios == (1, 2, 3)
        assert config.cohort.feature_years == 3
        assert config.match.caliper == 0.2

    @pytest.mark.unit
    def test_generator_types_are_converted(self):
        raw = {
            "generator": {
                "span": ["2005-01-01", "2019-12-31"],
                "codes_per_visit": [3, 6],
                "planted_pairs": [{"group_a": "DX002", "group_b": "PR001", "p_case": 0.7, "p_control": 0.2}],
            }
        }
        generator = PipelineConfigManager().build(raw).generator
        assert generator.span[0].year == 2005
        assert generator.codes_per_visit == (3, 6)
        assert generator.planted_pairs[0].group_b == "PR001"

    @pytest.mark.unit
    def test_command_line_overrides(self, tmp_path):
        raw = {"generator": {}, "seed": 1, "threads": 2, "scenarios": [1, 2]}
        config = PipelineConfigManager().build(
            raw, scenario="3", seed=77, threads=6, output=str(tmp_path / "out")
        )
        assert config.scenarios == (3,)
        assert config.seed == 77
        assert config.threads == 6
        assert config.output_dir == tmp_path / "out"

    @pytest.mark.unit
    def test_scenario_all(self):
        config = PipelineConfigManager().build({"generator": {}, "scenarios": [2]}, scenario="all")
        assert config.scenarios == (1, 2, 3)

    @pytest.mark.unit
    def test_scenario_config_windows(self):
        config = PipelineConfigManager().build({"generator": {}})
        scenario = config.scenario(2)
        assert scenario.selection_years == 2
        assert scenario.prediction_years == 2
        assert scenario.seed == config.cohort.seed

    @pytest.mark.unit
    def test_hash_changes_with_content(self):
        manager = PipelineConfigManager()
        a = config_hash(manager.build({"generator": {}}))
        b = config_hash(manager.build({"generator": {}}))
        c = config_hash(manager.build({"generator": {}, "seed": 1}))
        assert a == b
        assert a != c
        assert len(a) == 64


class TestValidation:
    """全部问题一次性报告"""

    @pytest.mark.unit
    def test_all_problems_reported(self):
        raw = {
            "generator": {"n_patients": 0},
            "match": {"caliper": -1},
            "train": {"heads": 4, "epochs": "ten"},
            "bogus": 1,
        }
        with pytest.raises(ConfigValidationError) as exc:
            PipelineConfigManager().build(raw)
        problems = exc.value.problems
        assert any("bogus" in p for p in problems)
        assert any("n_patients" in p for p in problems)
        assert any("caliper" in p for p in problems)
        assert any("heads" in p for p in problems)
        assert any("train.epochs" in p for p in problems)
        assert exc.value.exit_code == EXIT_CONFIG

    @pytest.mark.unit
    def test_real_data_requires_paths(self):
        with pytest.raises(ConfigValidationError) as exc:
            PipelineConfigManager().build({})
        assert sum("paths." in p for p in exc.value.problems) == 3

    @pytest.mark.unit
    def test_real_data_paths_must_exist(self, tmp_path):
        (tmp_path / "patients.csv").write_text("patient_id,birth_year,gender\n", encoding="utf-8")
        raw = {
            "paths": {
                "patients": str(tmp_path / "patients.csv"),
                "claims": str(tmp_path / "missing.csv"),
                "code_map": str(tmp_path / "map.csv"),
            }
        }
        with pytest.raises(ConfigValidationError) as exc:
            PipelineConfigManager().build(raw)
        assert len(exc.value.problems) == 2

    @pytest.mark.unit
    def test_generator_excludes_input_paths(self, tmp_path):
        raw = {"generator": {}, "paths": {"patients": str(tmp_path)}}
        with pytest.raises(ConfigValidationError):
            PipelineConfigManager().build(raw)

    @pytest.mark.unit
    def test_nullable_subset(self):
        config = PipelineConfigManager().build({"generator": {}, "match": {"subset_per_class": None}})
        assert config.match.subset_per_class is None

    @pytest.mark.unit
    @pytest.mark.parametrize("scenarios", [[4], [], "1"])
    def test_bad_scenarios(self, scenarios):
        with pytest.raises(ConfigValidationError):
            PipelineConfigManager().build({"generator": {}, "scenarios": scenarios})


class TestLoading:
    """配置文件读取"""

    @pytest.mark.unit
    def test_load_from_file(self, tiny_pipeline_config):
        config = PipelineConfigManager().load(tiny_pipeline_config)
        assert config.scenarios == (1,)
        assert config.generator.n_patients == 120

    @pytest.mark.unit
    def test_environment_variable(self, tiny_pipeline_config, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV_VAR, str(tiny_pipeline_config))
        assert PipelineConfigManager().load().seed == 5

    @pytest.mark.unit
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigValidationError):
            PipelineConfigManager().load(tmp_path / "nope.json")

    @pytest.mark.unit
    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigValidationError):
            PipelineConfigManager().load(path)

    @pytest.mark.unit
    def test_config_info(self, tiny_pipeline_config):
        manager = get_config_manager()
        config = manager.load(tiny_pipeline_config)
        info = manager.get_config_info(config)
        assert info["synthetic"] is True
        assert info["scenarios"] == [1]
        assert set(info["seeds"]) >= {"global", "gnn", "cohort", "split"}
        assert get_config_manager() is manager
