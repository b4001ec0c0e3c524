#!/usr/bin/env python3
"""CLI 测试 - 参数解析、info 输出与退出码"""

import json

import pytest

from claims_vgnn.cli import build_parser, main
from claims_vgnn.services.error_utils import EXIT_CONFIG, EXIT_DATA, EXIT_OK


class TestParser:
    """参数解析"""

    @pytest.mark.unit
    def test_train_requires_model(self):
        parser = build_parser()
        args = parser.parse_args(["train", "gbm", "--scenario", "2", "--seed", "9"])
        assert args.model == "gbm"
        assert args.scenario == "2"
        assert args.seed == 9
        with pytest.raises(SystemExit):
            parser.parse_args(["train"])

    @pytest.mark.unit
    def test_rejects_unknown_scenario(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["cohort", "--scenario", "4"])

    @pytest.mark.unit
    def test_common_options_on_every_command(self):
        parser = build_parser()
        for command in ["generate", "ingest", "cohort", "match", "evaluate", "explain", "run-all", "info"]:
            args = parser.parse_args([command, "--threads", "2", "--output", "out"])
            assert args.threads == 2
            assert args.output == "out"
            assert args.log_level == "INFO"


class TestMain:
    """main() 的退出码"""

    @pytest.mark.unit
    def test_info(self, tiny_pipeline_config, capsys):
        code = main(["info", "--config", str(tiny_pipeline_config), "--seed", "12"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "配置哈希" in out
        assert "run-all" in out
        assert "gnn" in out

    @pytest.mark.unit
    def test_invalid_config_exits_with_config_code(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"generator": {}, "train": {"heads": 2}}), encoding="utf-8")
        assert main(["info", "--config", str(path)]) == EXIT_CONFIG

    @pytest.mark.unit
    def test_missing_config_file(self, tmp_path):
        assert main(["info", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    @pytest.mark.unit
    def test_missing_artifact_exits_with_data_code(self, tiny_pipeline_config, capsys):
        code = main(["match", "--config", str(tiny_pipeline_config), "--log-level", "ERROR"])
        assert code == EXIT_DATA
        assert "claims-vgnn cohort" in capsys.readouterr().out

    @pytest.mark.unit
    def test_generate_succeeds(self, tiny_pipeline_config, tmp_path, capsys):
        output = tmp_path / "elsewhere"
        code = main(["generate", "--config", str(tiny_pipeline_config), "--output", str(output)])
        assert code == EXIT_OK
        assert (output / "data" / "claims.csv").exists()
        assert "generate 完成" in capsys.readouterr().out
