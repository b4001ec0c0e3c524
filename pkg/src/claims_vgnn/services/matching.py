"""留出划分、倾向评分与 1:1 匹配

- 划分：按标签分层的患者级留出，测试集保持自然类别比例
- 倾向评分：以标准化年龄与男性指示变量为协变量的 logistic 回归（statsmodels 牛顿法）
- 匹配：病例按评分降序处理，贪心最近邻、无放回，卡尺 = caliper * SD(全部评分)
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy.special import expit
from sklearn.model_selection import train_test_split
from statsmodels.tools.sm_exceptions import (
    ConvergenceWarning,
    PerfectSeparationError,
    PerfectSeparationWarning,
)

from .cohort import CohortSample
from .domain import Gender
from .error_utils import DataError, NumericalError

MATCHED_COLUMNS = ["case_patient_id", "control_patient_id", "case_score", "control_score"]
MIN_SPLIT_SAMPLES = 10


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> list[str]:
        if not 0 < self.test_fraction < 1:
            return ["split.test_fraction 必须在 (0, 1) 内"]
        return []


@dataclass(frozen=True)
class MatchConfig:
    caliper: float = 0.2
    subset_per_class: int | None = 20000
    max_iterations: int = 100
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.caliper <= 0:
            problems.append("match.caliper 必须为正数")
        if self.subset_per_class is not None and self.subset_per_class < 1:
            problems.append("match.subset_per_class 必须为正整数或 null")
        if self.max_iterations < 1:
            problems.append("match.max_iterations 必须为正整数")
        return problems


def _labels(samples: list[CohortSample]) -> np.ndarray:
    return np.array([sample.label for sample in samples], dtype=int)


def _male(samples: list[CohortSample]) -> np.ndarray:
    return np.array([1.0 if s.gender is Gender.M else 0.0 for s in samples])


def _ages(samples: list[CohortSample]) -> np.ndarray:
    return np.array([float(s.age_at_index) for s in samples])


def split(
    samples: list[CohortSample], cfg: SplitConfig
) -> tuple[list[CohortSample], list[CohortSample]]:
    """分层留出划分，返回 (train_pool, test_set)，两部分都按 patient_id 排序"""
    if len(samples) < MIN_SPLIT_SAMPLES:
        raise DataError(
            "too_few_samples", f"队列只有 {len(samples)} 个样本，至少需要 {MIN_SPLIT_SAMPLES} 个"
        )
    ordered = sorted(samples, key=lambda s: s.patient_id)
    labels = _labels(ordered)
    counts = np.bincount(labels, minlength=2)
    if counts.min() == 0:
        raise DataError("degenerate_cohort", "队列只包含一个类别，无法划分")
    if counts.min() < 2:
        raise DataError("degenerate_cohort", "少数类样本不足 2 个，无法分层划分")

    train, test = train_test_split(
        ordered,
        test_size=cfg.test_fraction,
        stratify=labels,
        random_state=cfg.seed % 2**32,
    )
    return sorted(train, key=lambda s: s.patient_id), sorted(test, key=lambda s: s.patient_id)


@dataclass
class PropensityModel:
    """P(label=1 | age, gender)；系数作用于 [1, 标准化年龄, 男性指示]"""

    coefficients: np.ndarray
    age_mean: float
    age_std: float
    iterations: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def design(self, ages: np.ndarray, male: np.ndarray) -> np.ndarray:
        standardized = (ages - self.age_mean) / self.age_std
        return np.column_stack([np.ones_like(ages), standardized, male])

    def predict(self, ages: np.ndarray, male: np.ndarray) -> np.ndarray:
        return expit(self.design(ages, male) @ self.coefficients)

    def score(self, samples: list[CohortSample]) -> dict[str, float]:
        values = self.predict(_ages(samples), _male(samples))
        return {s.patient_id: float(v) for s, v in zip(samples, values)}


def fit_propensity(
    train_pool: list[CohortSample],
    max_iterations: int = 100,
    logger: logging.Logger | None = None,
) -> PropensityModel:
    """牛顿法最大似然拟合倾向评分模型；不收敛或完全分离时抛出 NumericalError"""
    logger = logger or logging.getLogger(__name__)
    y = _labels(train_pool)
    if len(set(y.tolist())) < 2:
        raise DataError("degenerate_cohort", "倾向评分需要病例与对照同时存在")

    ages = _ages(train_pool)
    male = _male(train_pool)
    age_mean = float(ages.mean())
    age_std = float(ages.std())
    if age_std == 0:
        age_std = 1.0
    model = PropensityModel(np.zeros(3), age_mean, age_std)
    design = model.design(ages, male)

    # 常数协变量（单一性别或单一年龄）会使 Hessian 奇异，拟合时去掉，系数记为 0
    active = [0] + [j for j in (1, 2) if np.ptp(design[:, j]) > 0]
    diagnostics: dict[str, Any] = {"n": int(len(y)), "cases": int(y.sum()), "active": active}

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = sm.Logit(y, design[:, active]).fit(
                method="newton", maxiter=max_iterations, disp=False
            )
        except (PerfectSeparationError, np.linalg.LinAlgError) as error:
            diagnostics["reason"] = type(error).__name__
            raise NumericalError(
                "propensity_not_converged", f"倾向评分模型拟合失败: {error}", diagnostics
            )

    separated = any(issubclass(w.category, PerfectSeparationWarning) for w in caught)
    converged = bool(result.mle_retvals.get("converged", False))
    params = np.asarray(result.params, dtype=float)
    diagnostics.update(
        {
            "iterations": int(result.mle_retvals.get("iterations", 0)),
            "converged": converged,
            "perfect_separation": separated,
            "params": params.tolist(),
        }
    )
    if separated or not converged or not np.all(np.isfinite(params)):
        raise NumericalError(
            "propensity_not_converged",
            f"倾向评分模型未收敛（迭代 {diagnostics['iterations']} 次, 完全分离={separated}）",
            diagnostics,
        )
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        logger.warning("倾向评分模型拟合出现收敛警告")

    coefficients = np.zeros(3)
    coefficients[active] = params
    model.coefficients = coefficients
    model.iterations = diagnostics["iterations"]
    model.diagnostics = diagnostics
    logger.info(f"倾向评分模型收敛: 迭代 {model.iterations} 次, 系数 {np.round(coefficients, 4).tolist()}")
    return model


@dataclass(frozen=True)
class MatchedPair:
    case_patient_id: str
    control_patient_id: str
    case_score: float
    control_score: float


@dataclass
class MatchResult:
    pairs: list[MatchedPair]
    samples: list[CohortSample]
    unmatched_cases: list[str]
    caliper_width: float

    @property
    def match_rate(self) -> float:
        total = len(self.pairs) + len(self.unmatched_cases)
        return len(self.pairs) / total if total else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[p.case_patient_id, p.control_patient_id, p.case_score, p.control_score] for p in self.pairs],
            columns=MATCHED_COLUMNS,
        )


def match_one_to_one(
    train_pool: list[CohortSample],
    scores: dict[str, float],
    cfg: MatchConfig,
    logger: logging.Logger | None = None,
) -> MatchResult:
    """贪心最近邻 1:1 匹配，无放回"""
    logger = logger or logging.getLogger(__name__)
    missing = [s.patient_id for s in train_pool if s.patient_id not in scores]
    if missing:
        raise DataError("missing_scores", f"{len(missing)} 个样本缺少倾向评分")

    cases = sorted(
        (s for s in train_pool if s.label == 1), key=lambda s: (-scores[s.patient_id], s.patient_id)
    )
    controls = sorted((s for s in train_pool if s.label == 0), key=lambda s: s.patient_id)
    all_scores = np.array([scores[s.patient_id] for s in train_pool])
    width = cfg.caliper * float(np.std(all_scores, ddof=1)) if len(all_scores) > 1 else 0.0

    control_scores = np.array([scores[s.patient_id] for s in controls])
    available = np.ones(len(controls), dtype=bool)
    pairs: list[MatchedPair] = []
    chosen: list[CohortSample] = []
    unmatched: list[str] = []
    for case in cases:
        case_score = scores[case.patient_id]
        if not available.any():
            unmatched.append(case.patient_id)
            continue
        distance = np.where(available, np.abs(control_scores - case_score), np.inf)
        best = int(np.argmin(distance))
        if distance[best] > width:
            unmatched.append(case.patient_id)
            continue
        available[best] = False
        control = controls[best]
        pairs.append(
            MatchedPair(case.patient_id, control.patient_id, case_score, float(control_scores[best]))
        )
        chosen.extend([case, control])

    if not pairs:
        raise DataError(
            "matching_failed",
            f"卡尺 {width:.6g} 内没有任何病例找到匹配对照",
            {"cases": len(cases), "controls": len(controls), "caliper_width": width},
        )
    if unmatched:
        logger.warning(f"{len(unmatched)} 名病例未找到卡尺内的对照，已丢弃")
    logger.info(f"1:1 匹配完成: {len(pairs)} 对, 匹配率 {len(pairs) / len(cases):.1%}")
    return MatchResult(
        pairs=pairs,
        samples=sorted(chosen, key=lambda s: s.patient_id),
        unmatched_cases=unmatched,
        caliper_width=width,
    )


def subset(samples: list[CohortSample], n_per_class: int, seed: int) -> list[CohortSample]:
    """每个类别均匀无放回抽取 n_per_class 个样本"""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chosen: list[CohortSample] = []
    for label in (1, 0):
        members = sorted((s for s in samples if s.label == label), key=lambda s: s.patient_id)
        if n_per_class > len(members):
            raise DataError(
                "subset_too_large",
                f"类别 {label} 只有 {len(members)} 个样本，无法抽取 {n_per_class} 个",
            )
        picks = rng.choice(len(members), size=n_per_class, replace=False)
        chosen.extend(members[int(i)] for i in picks)
    return sorted(chosen, key=lambda s: s.patient_id)


def standardized_mean_difference(treated: np.ndarray, control: np.ndarray) -> float:
    """(mean1 - mean0) / sqrt((var1 + var0) / 2)，方差取 ddof=1"""
    diff = float(np.mean(treated) - np.mean(control))
    var_t = float(np.var(treated, ddof=1)) if len(treated) > 1 else 0.0
    var_c = float(np.var(control, ddof=1)) if len(control) > 1 else 0.0
    pooled = np.sqrt((var_t + var_c) / 2)
    if pooled == 0:
        return 0.0 if diff == 0 else float(np.sign(diff) * np.inf)
    return diff / pooled


def balance_table(samples: list[CohortSample]) -> dict[str, float]:
    labels = _labels(samples)
    ages, male = _ages(samples), _male(samples)
    return {
        "smd_age": standardized_mean_difference(ages[labels == 1], ages[labels == 0]),
        "smd_male": standardized_mean_difference(male[labels == 1], male[labels == 0]),
    }


def balance_report(before: list[CohortSample], after: list[CohortSample]) -> dict[str, Any]:
    """balance.json 内容：匹配前后的年龄与性别 SMD"""
    return {
        "before": balance_table(before),
        "after": balance_table(after),
        "n_before": len(before),
        "n_after": len(after),
    }
