"""产物读写 - 目录布局、CSV/JSON 输出、摘要、manifest 与文件锁

输出目录布局：
    <output>/data/                 generate 产出的合成数据集
    <output>/ingest/               映射后的理赔记录与摄取报告
    <output>/scenario_<k>/         队列文件
        match/                     划分、匹配与平衡诊断
        models/<regime>/<model>/   vgnn.pt / rf.joblib / gbm.joblib
        explain/                   W.csv / relations_top.csv / vocabulary.csv
    <output>/results.csv           全部场景的评估结果
    <output>/summary.txt           文本条形图与相对提升
"""

import hashlib
import json
import logging
import os
import platform
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any

import pandas as pd
from filelock import FileLock, Timeout

from .cohort import CohortSample, load_samples
from .error_utils import DataError, MissingArtifactError

LOCK_TIMEOUT = 30
MANIFEST_FILE = "manifest.json"
TRACKED_PACKAGES = (
    "claims-vgnn",
    "numpy",
    "pandas",
    "scipy",
    "scikit-learn",
    "statsmodels",
    "torch",
)


@dataclass(frozen=True)
class ArtifactLayout:
    output_dir: Path

    @property
    def data_dir(self) -> Path:
        return self.output_dir / "data"

    @property
    def ingest_dir(self) -> Path:
        return self.output_dir / "ingest"

    @property
    def results_path(self) -> Path:
        return self.output_dir / "results.csv"

    @property
    def summary_path(self) -> Path:
        return self.output_dir / "summary.txt"

    @property
    def patients_path(self) -> Path:
        return self.ingest_dir / "patients.csv"

    @property
    def mapped_claims_path(self) -> Path:
        return self.ingest_dir / "claims_mapped.csv"

    @property
    def vocabulary_path(self) -> Path:
        return self.ingest_dir / "vocabulary.csv"

    @property
    def case_definition_path(self) -> Path:
        return self.ingest_dir / "case_definition.csv"

    def scenario_dir(self, scenario: int) -> Path:
        return self.output_dir / f"scenario_{scenario}"

    def cohort_paths(self, scenario: int) -> tuple[Path, Path]:
        directory = self.scenario_dir(scenario)
        return directory / "cohort.csv", directory / "cohort_codes.csv"

    def match_dir(self, scenario: int) -> Path:
        return self.scenario_dir(scenario) / "match"

    def ids_path(self, scenario: int, name: str) -> Path:
        """train_pool / test / matched / subset 的 id 清单"""
        return self.match_dir(scenario) / f"{name}_ids.txt"

    def model_dir(self, scenario: int, regime: str, model: str) -> Path:
        return self.scenario_dir(scenario) / "models" / regime / model

    def model_path(self, scenario: int, regime: str, model: str) -> Path:
        suffix = ".pt" if model == "vgnn" else ".joblib"
        return self.model_dir(scenario, regime, model) / f"{model}{suffix}"

    def explain_dir(self, scenario: int) -> Path:
        return self.scenario_dir(scenario) / "explain"

    def evaluation_dir(self) -> Path:
        return self.output_dir / "evaluation"


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def write_json(data: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: Path, producer: str) -> Any:
    require(path, producer)
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_ids(ids: list[str], path: Path) -> Path:
    """每行一个 patient_id 的清单文件"""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{pid}\n" for pid in ids), encoding="utf-8")
    return path


def read_ids(path: Path, producer: str) -> list[str]:
    require(path, producer)
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line]


def require(path: Path, producer: str) -> Path:
    """上游产物必须存在，否则提示对应的子命令"""
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def package_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


@contextmanager
def stage_lock(directory: Path, logger: logging.Logger | None = None) -> Iterator[Path]:
    """阶段目录写锁，防止两个进程同时写入同一输出目录"""
    logger = logger or logging.getLogger(__name__)
    directory.mkdir(parents=True, exist_ok=True)
    lock_file = directory.with_suffix(".lock")
    try:
        with FileLock(lock_file, timeout=LOCK_TIMEOUT):
            yield directory
    except Timeout:
        logger.error(f"等待目录锁超时: {lock_file}")
        raise DataError("stage_locked", f"{directory} 正被另一个进程写入", {"lock": str(lock_file)})


def write_manifest(
    directory: Path,
    stage: str,
    config_info: dict[str, Any],
    inputs: list[Path],
    outputs: list[Path],
    extra: dict[str, Any] | None = None,
) -> Path:
    """manifest.json：配置哈希、种子、输入摘要、输出文件名与版本（不含时间戳）"""
    manifest = {
        "stage": stage,
        "config_hash": config_info["config_hash"],
        "seeds": config_info["seeds"],
        "inputs": {_relative(path, directory): file_digest(path) for path in sorted(inputs)},
        "outputs": sorted(_relative(path, directory) for path in outputs),
        "versions": package_versions(),
    }
    if extra:
        manifest["details"] = extra
    return write_json(manifest, directory / MANIFEST_FILE)


def _relative(path: Path, base: Path) -> str:
    try:
        return Path(os.path.relpath(path.resolve(), base.resolve())).as_posix()
    except ValueError:
        return path.resolve().as_posix()


def load_id_set(layout: ArtifactLayout, scenario: int, name: str) -> list[CohortSample]:
    """按 match 阶段的 id 清单从队列中取出样本（按 patient_id 排序）"""
    cohort_path, codes_path = layout.cohort_paths(scenario)
    require(cohort_path, "cohort")
    require(codes_path, "cohort")
    ids = set(read_ids(layout.ids_path(scenario, name), "match"))
    samples = [s for s in load_samples(cohort_path, codes_path) if s.patient_id in ids]
    if len(samples) != len(ids):
        raise DataError(
            "stale_artifact",
            f"场景 {scenario} 的 {name} 清单与队列不一致，请重新运行 `claims-vgnn match`",
        )
    return sorted(samples, key=lambda s: s.patient_id)
