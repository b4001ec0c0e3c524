"""评估 - 基于平均秩的 AUROC 与场景结果表"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .error_utils import DataError

MODELS = ("vgnn", "rf", "gbm")
REGIMES = ("matched", "subset")
RESULTS_COLUMNS = ["scenario", "model", "regime", "auroc", "n_train", "n_test", "wall_seconds"]
ABSENT = "absent"
BAR_WIDTH = 40


@dataclass(frozen=True)
class ReportConfig:
    record_wall_time: bool = False
    plot: bool = False


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise DataError("invalid_scores", "评分与标签长度必须一致")
        if len(self.scores) < 2:
            raise DataError("undefined_auroc", "至少需要两个样本")


def auroc(scores: np.ndarray | list[float], labels: np.ndarray | list[int]) -> float:
    """Mann-Whitney 恒等式：随机病例评分高于随机对照的概率，平局计 1/2"""
    scored = ScoredSet(np.asarray(scores), np.asarray(labels))
    positives = scored.labels == 1
    n_pos = int(positives.sum())
    n_neg = len(scored.labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("undefined_auroc", "AUROC 需要两个类别同时存在")
    ranks = rankdata(scored.scores, method="average")
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class ResultRow:
    scenario: int
    model: str
    regime: str
    auroc: float
    n_train: int
    n_test: int
    wall_seconds: float | None = None


def scenario_report(
    results: list[ResultRow],
    scenarios: list[int] | None = None,
    models: tuple[str, ...] = MODELS,
    regimes: tuple[str, ...] = REGIMES,
    record_wall_time: bool = False,
) -> pd.DataFrame:
    """场景 × 模型 × 队列方案的结果表；缺失的单元格显式写为 absent"""
    if scenarios is None:
        scenarios = sorted({row.scenario for row in results})
    cells = {(row.scenario, row.model, row.regime): row for row in results}

    rows = []
    for scenario in scenarios:
        for model in models:
            for regime in regimes:
                row = cells.get((scenario, model, regime))
                if row is None:
                    rows.append([scenario, model, regime, ABSENT, ABSENT, ABSENT, ABSENT])
                    continue
                wall = ""
                if record_wall_time and row.wall_seconds is not None:
                    wall = f"{row.wall_seconds:.3f}"
                rows.append(
                    [scenario, model, regime, f"{row.auroc:.6f}", row.n_train, row.n_test, wall]
                )
    return pd.DataFrame(rows, columns=RESULTS_COLUMNS)


def _present(frame: pd.DataFrame) -> pd.DataFrame:
    present = frame.loc[frame["auroc"] != ABSENT].copy()
    present["auroc"] = present["auroc"].astype(float)
    return present


def relative_improvement(frame: pd.DataFrame) -> pd.DataFrame:
    """每个场景与队列方案下 VGNN 相对各基线的 AUROC 提升（百分比）"""
    present = _present(frame)
    rows = []
    for (scenario, regime), cell in present.groupby(["scenario", "regime"], sort=True):
        by_model = dict(zip(cell["model"], cell["auroc"]))
        if "vgnn" not in by_model:
            continue
        for baseline in ("rf", "gbm"):
            if baseline in by_model and by_model[baseline] > 0:
                gain = (by_model["vgnn"] - by_model[baseline]) / by_model[baseline] * 100
                rows.append([scenario, regime, baseline, round(gain, 2)])
    return pd.DataFrame(rows, columns=["scenario", "regime", "baseline", "improvement_pct"])


def text_summary(frame: pd.DataFrame) -> str:
    """终端友好的文本条形图 + 相对提升"""
    lines = []
    for scenario in sorted(set(frame["scenario"])):
        for regime in sorted(set(frame["regime"]), key=lambda r: REGIMES.index(r) if r in REGIMES else 99):
            lines.append(f"scenario {scenario} / {regime}")
            cell = frame.loc[(frame["scenario"] == scenario) & (frame["regime"] == regime)]
            for row in cell.itertuples(index=False):
                if row.auroc == ABSENT:
                    lines.append(f"  {row.model:<5} {ABSENT}")
                    continue
                value = float(row.auroc)
                bar = "#" * int(round(value * BAR_WIDTH))
                lines.append(f"  {row.model:<5} {bar:<{BAR_WIDTH}} {value:.4f}")
    improvements = relative_improvement(frame)
    if not improvements.empty:
        lines.append("")
        lines.append("VGNN relative improvement (%)")
        for row in improvements.itertuples(index=False):
            lines.append(
                f"  scenario {row.scenario} / {row.regime} vs {row.baseline}: {row.improvement_pct:+.2f}"
            )
        lines.append(f"  mean: {improvements['improvement_pct'].mean():+.2f}")
    return "\n".join(lines) + "\n"


def plot_auroc_bars(
    frame: pd.DataFrame, path: Path | str, logger: logging.Logger | None = None
) -> Path | None:
    """静态 AUROC 柱状图；未安装 matplotlib 时跳过"""
    logger = logger or logging.getLogger(__name__)
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("未安装 matplotlib，跳过 AUROC 图（pip install claims-vgnn[plot]）")
        return None

    present = _present(frame)
    if present.empty:
        logger.warning("没有可绘制的 AUROC 结果")
        return None
    labels = [f"S{r.scenario}\n{r.regime}" for r in present.drop_duplicates(["scenario", "regime"]).itertuples()]
    groups = present.drop_duplicates(["scenario", "regime"])[["scenario", "regime"]].values.tolist()
    models = [m for m in MODELS if m in set(present["model"])]
    width = 0.8 / max(len(models), 1)

    fig, ax = plt.subplots(figsize=(max(6, len(groups) * 1.5), 4))
    for k, model in enumerate(models):
        heights = []
        for scenario, regime in groups:
            match = present.loc[
                (present["scenario"] == scenario) & (present["regime"] == regime) & (present["model"] == model),
                "auroc",
            ]
            heights.append(float(match.iloc[0]) if len(match) else 0.0)
        ax.bar(np.arange(len(groups)) + k * width, heights, width, label=model)
    ax.set_xticks(np.arange(len(groups)) + width * (len(models) - 1) / 2)
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1)
    ax.set_ylabel("AUROC")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
