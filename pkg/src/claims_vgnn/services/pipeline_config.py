"""流水线配置管理模块
从 JSON 配置文件读取各模块配置，应用命令行覆盖，并一次性校验全部规则
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date
from pathlib import Path
from typing import Any

from dateutil.parser import isoparse

from ..resources import default_case_definition_path
from .baselines import TreeEnsembleConfig
from .cohort import ScenarioConfig
from .datagen import GeneratorConfig, PlantedPair
from .error_utils import ConfigValidationError
from .evaluation import ReportConfig
from .explain import ExplainConfig
from .matching import MatchConfig, SplitConfig
from .vgnn import TrainConfig

CONFIG_ENV_VAR = "CLAIMS_VGNN_CONFIG"
ALL_SCENARIOS = (1, 2, 3)
SECTIONS = (
    "paths",
    "generator",
    "cohort",
    "split",
    "match",
    "train",
    "forest",
    "boosting",
    "explain",
    "report",
)
TOP_LEVEL_KEYS = {"seed", "threads", "scenarios", *SECTIONS}


def derive_seed(global_seed: int, module: str) -> int:
    """模块种子 = SHA-256("{global_seed}:{module}") 的前 8 字节（无符号 64 位）"""
    digest = hashlib.sha256(f"{global_seed}:{module}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class PathsConfig:
    patients: str | None = None
    claims: str | None = None
    code_map: str | None = None
    case_definition: str | None = None
    output_dir: str = "output"

    @property
    def case_definition_path(self) -> Path:
        if self.case_definition:
            return Path(self.case_definition)
        return default_case_definition_path()


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    scenarios: tuple[int, ...] = ALL_SCENARIOS
    seed: int = 0
    threads: int = 1
    generator: GeneratorConfig | None = None
    cohort: ScenarioConfig = field(default_factory=ScenarioConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    forest: TreeEnsembleConfig = field(default_factory=TreeEnsembleConfig)
    boosting: TreeEnsembleConfig = field(default_factory=TreeEnsembleConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output_dir)

    def scenario(self, scenario_id: int) -> ScenarioConfig:
        return replace(self.cohort, scenario_id=scenario_id)

    def seeds(self) -> dict[str, int]:
        return {
            "global": self.seed,
            "datagen": self.generator.seed if self.generator else derive_seed(self.seed, "datagen"),
            "cohort": self.cohort.seed,
            "split": self.split.seed,
            "matching": self.match.seed,
            "gnn": self.train.seed,
            "forest": self.forest.seed,
            "boosting": self.boosting.seed,
            "explain": self.explain.seed,
        }

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(asdict(self))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, Path):
        return str(value)
    return value


def config_hash(config: PipelineConfig) -> str:
    """规范化（键排序）JSON 的 SHA-256"""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _same_kind(default: Any, value: Any, optional: bool) -> bool:
    """数值项不接受字符串，布尔项只接受布尔值；null 只用于可选项"""
    if value is None:
        return optional or default is None
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        return isinstance(default, float) or isinstance(value, int)
    if isinstance(default, str):
        return isinstance(value, str)
    return True


def _section(cls: type, data: Any, name: str, problems: list[str]) -> Any:
    """把一个 JSON 段落转换为配置 dataclass，未知键与类型错误记入 problems"""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        problems.append(f"{name} 必须是 JSON 对象")
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        problems.append(f"{name} 含有未知配置项: {unknown}")
    if "seed" in data:
        problems.append(f"{name}.seed 由全局 seed 派生，不能单独设置")
    kwargs = {k: v for k, v in data.items() if k in known and k != "seed"}
    defaults = cls()
    optional = {f.name for f in fields(cls) if "None" in str(f.type)}
    for key, value in list(kwargs.items()):
        if not _same_kind(getattr(defaults, key), value, key in optional):
            problems.append(f"{name}.{key} 类型错误: {value!r}")
            del kwargs[key]
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as error:
        problems.append(f"{name} 无效: {error}")
        return cls()


def _generator_section(data: Any, problems: list[str]) -> GeneratorConfig | None:
    if data is None:
        return None
    if not isinstance(data, dict):
        problems.append("generator 必须是 JSON 对象")
        return None
    data = dict(data)
    try:
        if "span" in data:
            start, end = data["span"]
            data["span"] = (isoparse(start).date(), isoparse(end).date())
        for key in ("codes_per_visit", "age_range"):
            if key in data:
                low, high = data[key]
                data[key] = (int(low), int(high))
        if "planted_pairs" in data:
            data["planted_pairs"] = [PlantedPair(**pair) for pair in data["planted_pairs"]]
    except (TypeError, ValueError) as error:
        problems.append(f"generator 无效: {error}")
        return None
    config: GeneratorConfig = _section(GeneratorConfig, data, "generator", problems)
    return config


class PipelineConfigManager:
    """流水线配置管理器"""

    def __init__(self, logger: logging.Logger | None = None):
        self.logger = logger or logging.getLogger(__name__)
        self._config_cache: dict[str, dict[str, Any]] = {}

    def config_path(self, path: str | Path | None = None) -> Path | None:
        """配置文件路径：命令行参数优先，其次是环境变量"""
        if path:
            return Path(path)
        env_path = os.getenv(CONFIG_ENV_VAR)
        return Path(env_path) if env_path else None

    def load_raw(self, path: str | Path | None = None) -> dict[str, Any]:
        """读取配置文件的原始 JSON（带缓存）"""
        config_path = self.config_path(path)
        if config_path is None:
            self.logger.info("未指定配置文件，使用默认配置")
            return {}
        key = str(config_path.resolve())
        if key in self._config_cache:
            return self._config_cache[key]
        try:
            with open(config_path, encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigValidationError([f"配置文件不存在: {config_path}"])
        except json.JSONDecodeError as error:
            raise ConfigValidationError([f"配置文件不是合法 JSON: {config_path}: {error}"])
        if not isinstance(raw, dict):
            raise ConfigValidationError([f"配置文件顶层必须是 JSON 对象: {config_path}"])
        self._config_cache[key] = raw
        self.logger.info(f"成功加载配置: {config_path}")
        return raw

    def build(
        self,
        raw: dict[str, Any],
        *,
        scenario: str | None = None,
        seed: int | None = None,
        threads: int | None = None,
        output: str | None = None,
    ) -> PipelineConfig:
        """解析配置、应用命令行覆盖、派生模块种子并校验全部规则"""
        problems: list[str] = []
        unknown = sorted(set(raw) - TOP_LEVEL_KEYS)
        if unknown:
            problems.append(f"未知的顶层配置项: {unknown}")

        global_seed = raw.get("seed", 0) if seed is None else seed
        if not isinstance(global_seed, int) or not 0 <= global_seed < 2**64:
            problems.append("seed 必须是 64 位无符号整数")
            global_seed = 0

        worker_count = raw.get("threads", 1) if threads is None else threads
        if not isinstance(worker_count, int) or worker_count < 1:
            problems.append("threads 必须为正整数")
            worker_count = 1

        scenarios = self._scenarios(raw.get("scenarios", list(ALL_SCENARIOS)), scenario, problems)

        paths = _section(PathsConfig, raw.get("paths"), "paths", problems)
        if output:
            paths = replace(paths, output_dir=output)

        def seeded(config: Any, module: str) -> Any:
            return replace(config, seed=derive_seed(global_seed, module))

        generator = _generator_section(raw.get("generator"), problems)
        config = PipelineConfig(
            paths=paths,
            scenarios=scenarios,
            seed=global_seed,
            threads=worker_count,
            generator=seeded(generator, "datagen") if generator else None,
            cohort=seeded(_section(ScenarioConfig, raw.get("cohort"), "cohort", problems), "cohort"),
            split=seeded(_section(SplitConfig, raw.get("split"), "split", problems), "split"),
            match=seeded(_section(MatchConfig, raw.get("match"), "match", problems), "matching"),
            train=seeded(_section(TrainConfig, raw.get("train"), "train", problems), "gnn"),
            forest=seeded(
                _section(TreeEnsembleConfig, raw.get("forest"), "forest", problems), "forest"
            ),
            boosting=seeded(
                _section(TreeEnsembleConfig, raw.get("boosting"), "boosting", problems), "boosting"
            ),
            explain=seeded(_section(ExplainConfig, raw.get("explain"), "explain", problems), "explain"),
            report=_section(ReportConfig, raw.get("report"), "report", problems),
        )
        problems.extend(self.validate(config))
        if problems:
            raise ConfigValidationError(problems)
        return config

    def load(self, path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
        return self.build(self.load_raw(path), **overrides)

    @staticmethod
    def _scenarios(value: Any, override: str | None, problems: list[str]) -> tuple[int, ...]:
        if override is not None:
            if override == "all":
                return ALL_SCENARIOS
            value = [override]
        if not isinstance(value, list) or not value:
            problems.append("scenarios 必须是非空列表")
            return ALL_SCENARIOS
        scenarios = []
        for item in value:
            try:
                scenario_id = int(item)
            except (TypeError, ValueError):
                scenario_id = -1
            if scenario_id not in ALL_SCENARIOS:
                problems.append(f"场景编号必须为 1、2 或 3: {item!r}")
            else:
                scenarios.append(scenario_id)
        return tuple(sorted(set(scenarios))) or ALL_SCENARIOS

    def validate(self, config: PipelineConfig) -> list[str]:
        """返回全部校验问题（不在第一个问题处停止）"""
        problems: list[str] = []
        paths = config.paths
        if config.generator is not None:
            problems.extend(
                config.generator.validate(
                    min_qualifying_months=config.cohort.min_qualifying_months,
                    min_codes_per_month=config.cohort.min_codes_per_month,
                    feature_years=config.cohort.feature_years,
                )
            )
            for name in ("patients", "claims", "code_map"):
                if getattr(paths, name):
                    problems.append(f"配置了 generator 时 paths.{name} 由生成器产出，不能再指定")
        else:
            for name in ("patients", "claims", "code_map"):
                value = getattr(paths, name)
                if not value:
                    problems.append(f"未配置 generator 时必须提供 paths.{name}")
                elif not Path(value).exists():
                    problems.append(f"paths.{name} 不存在: {value}")
        if paths.case_definition and not Path(paths.case_definition).exists():
            problems.append(f"paths.case_definition 不存在: {paths.case_definition}")
        if not paths.output_dir:
            problems.append("paths.output_dir 不能为空")

        problems.extend(config.cohort.validate())
        problems.extend(config.split.validate())
        problems.extend(config.match.validate())
        problems.extend(config.train.validate())
        problems.extend(config.forest.validate("forest"))
        problems.extend(config.boosting.validate("boosting"))
        problems.extend(config.explain.validate())
        return problems

    def get_config_info(self, config: PipelineConfig) -> dict[str, Any]:
        """获取配置信息（用于调试与 manifest）"""
        return {
            "config_hash": config_hash(config),
            "scenarios": list(config.scenarios),
            "seeds": config.seeds(),
            "output_dir": str(config.output_dir),
            "synthetic": config.generator is not None,
        }


# 全局配置管理器实例
_config_manager: PipelineConfigManager | None = None


def get_config_manager(logger: logging.Logger | None = None) -> PipelineConfigManager:
    """获取全局配置管理器实例"""
    global _config_manager
    if _config_manager is None:
        _config_manager = PipelineConfigManager(logger)
    return _config_manager


def reset_config_cache() -> None:
    """重置配置缓存（用于测试）"""
    global _config_manager
    _config_manager = None
