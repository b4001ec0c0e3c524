"""扁平特征基线 - 随机森林与梯度提升树

特征向量长度 V + 2：各分组计数，然后是标准化年龄与男性指示变量。
训练前按 patient_id 排序，使预测与输入行序无关。
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import joblib
import numpy as np
from scipy.special import expit, logit
from sklearn.ensemble import RandomForestClassifier
from sklearn.tree import DecisionTreeRegressor

from .cohort import CohortSample
from .domain import Gender
from .error_utils import DataError
from .relations import Vocabulary

BASELINE_FORMAT = "claims-vgnn/baseline"
BASELINE_KINDS = ("rf", "gbm")


@dataclass(frozen=True)
class TreeEnsembleConfig:
    n_trees: int = 200
    max_depth: int = 6
    min_samples_leaf: int = 1
    features_per_split: int | None = None
    learning_rate: float = 0.1
    seed: int = 0

    def validate(self, name: str = "baseline") -> list[str]:
        problems = []
        if self.n_trees < 0:
            problems.append(f"{name}.n_trees 不能为负数")
        if self.max_depth < 0:
            problems.append(f"{name}.max_depth 不能为负数")
        if self.min_samples_leaf < 1:
            problems.append(f"{name}.min_samples_leaf 必须为正整数")
        if self.features_per_split is not None and self.features_per_split < 1:
            problems.append(f"{name}.features_per_split 必须为正整数或 null")
        if not 0 < self.learning_rate <= 1:
            problems.append(f"{name}.learning_rate 必须在 (0, 1] 内")
        return problems


@dataclass(frozen=True)
class FeatureVector:
    patient_id: str
    values: np.ndarray
    label: int


class Featurizer:
    """计数 + 年龄 + 性别；年龄的均值与标准差只在训练集上估计"""

    def __init__(self, vocab: Vocabulary, age_mean: float = 0.0, age_std: float = 1.0):
        self.vocab = vocab
        self.age_mean = age_mean
        self.age_std = age_std

    @classmethod
    def fit(cls, vocab: Vocabulary, samples: list[CohortSample]) -> "Featurizer":
        ages = np.array([s.age_at_index for s in samples], dtype=float)
        std = float(ages.std()) if len(ages) else 0.0
        return cls(vocab, float(ages.mean()) if len(ages) else 0.0, std if std > 0 else 1.0)

    @property
    def width(self) -> int:
        return len(self.vocab) + 2

    def vectorize(self, sample: CohortSample) -> FeatureVector:
        values = np.zeros(self.width)
        for group, count in sample.grouped_codes:
            if group in self.vocab:
                values[self.vocab.index(group)] += count
        values[-2] = (sample.age_at_index - self.age_mean) / self.age_std
        values[-1] = 1.0 if sample.gender is Gender.M else 0.0
        return FeatureVector(sample.patient_id, values, sample.label)

    def matrix(self, samples: list[CohortSample]) -> tuple[np.ndarray, np.ndarray]:
        vectors = [self.vectorize(s) for s in samples]
        x = np.vstack([v.values for v in vectors]) if vectors else np.zeros((0, self.width))
        y = np.array([v.label for v in vectors], dtype=int)
        return x, y

    def state(self) -> dict[str, float]:
        return {"age_mean": self.age_mean, "age_std": self.age_std}


class ConstantModel:
    """退化输入下的常数预测器"""

    def __init__(self, probability: float):
        self.probability = probability

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return np.full(len(x), self.probability)


class ForestModel:
    def __init__(self, estimator: RandomForestClassifier):
        self.estimator = estimator

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.estimator.predict_proba(x)[:, 1]


class BoostedModel:
    """score = sigmoid(prior 对数几率 + Σ learning_rate · tree(x))"""

    def __init__(self, prior_log_odds: float, learning_rate: float):
        self.prior_log_odds = prior_log_odds
        self.learning_rate = learning_rate
        self.trees: list[DecisionTreeRegressor | float] = []

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        raw = np.full(len(x), self.prior_log_odds)
        for tree in self.trees:
            step = tree if isinstance(tree, float) else tree.predict(x)
            raw = raw + self.learning_rate * step
        return raw

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(x))


def _ordered(samples: list[CohortSample]) -> list[CohortSample]:
    return sorted(samples, key=lambda s: s.patient_id)


def _degenerate(y: np.ndarray, logger: logging.Logger, kind: str) -> ConstantModel | None:
    if len(y) == 0:
        raise DataError("empty_training_set", f"{kind} 训练集为空")
    if len(set(y.tolist())) < 2:
        logger.warning(f"{kind} 训练集只有一个类别，退化为常数预测器")
        return ConstantModel(float(y.mean()))
    return None


def train_forest(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TreeEnsembleConfig,
    threads: int = 1,
    logger: logging.Logger | None = None,
) -> ForestModel | ConstantModel:
    """Bootstrap 的 Gini CART 森林，每次分裂抽取 features_per_split 个特征（默认 ⌊√F⌋）"""
    logger = logger or logging.getLogger(__name__)
    constant = _degenerate(y, logger, "随机森林")
    if constant is not None:
        return constant
    if cfg.max_depth == 0 or cfg.n_trees == 0:
        logger.warning("随机森林深度或树数为 0，退化为基础率预测器")
        return ConstantModel(float(y.mean()))
    estimator = RandomForestClassifier(
        n_estimators=cfg.n_trees,
        criterion="gini",
        max_depth=cfg.max_depth,
        min_samples_leaf=cfg.min_samples_leaf,
        max_features=cfg.features_per_split or "sqrt",
        bootstrap=True,
        random_state=cfg.seed % 2**32,
        n_jobs=threads,
    )
    estimator.fit(x, y)
    return ForestModel(estimator)


def train_boosted(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TreeEnsembleConfig,
    logger: logging.Logger | None = None,
) -> BoostedModel | ConstantModel:
    """逐轮用回归树拟合 logistic 损失的负梯度 y - sigmoid(F)"""
    logger = logger or logging.getLogger(__name__)
    constant = _degenerate(y, logger, "梯度提升")
    if constant is not None:
        return constant

    rate = float(y.mean())
    model = BoostedModel(float(logit(rate)), cfg.learning_rate)
    raw = np.full(len(y), model.prior_log_odds)
    for round_index in range(cfg.n_trees):
        residual = y - expit(raw)
        if cfg.max_depth == 0:
            step = float(residual.mean())
            model.trees.append(step)
            raw = raw + cfg.learning_rate * step
            continue
        tree = DecisionTreeRegressor(
            max_depth=cfg.max_depth,
            min_samples_leaf=cfg.min_samples_leaf,
            max_features=cfg.features_per_split,
            random_state=(cfg.seed + round_index) % 2**32,
        )
        tree.fit(x, residual)
        model.trees.append(tree)
        raw = raw + cfg.learning_rate * tree.predict(x)
    if not np.all(np.isfinite(raw)):
        raise DataError("boosting_diverged", "梯度提升的得分出现非有限值")
    return model


class BaselineModel:
    """特征化器 + 树集成，按样本直接预测"""

    def __init__(
        self,
        kind: str,
        featurizer: Featurizer,
        estimator: ForestModel | BoostedModel | ConstantModel,
        config: TreeEnsembleConfig,
    ):
        if kind not in BASELINE_KINDS:
            raise DataError("invalid_baseline", f"未知的基线模型: {kind}")
        self.kind = kind
        self.featurizer = featurizer
        self.estimator = estimator
        self.config = config

    def predict(self, samples: list[CohortSample]) -> np.ndarray:
        x, _ = self.featurizer.matrix(samples)
        return np.asarray(self.estimator.predict_proba(x), dtype=float)


def fit_baseline(
    kind: str,
    samples: list[CohortSample],
    vocab: Vocabulary,
    cfg: TreeEnsembleConfig,
    threads: int = 1,
    logger: logging.Logger | None = None,
) -> BaselineModel:
    logger = logger or logging.getLogger(__name__)
    ordered = _ordered(samples)
    featurizer = Featurizer.fit(vocab, ordered)
    x, y = featurizer.matrix(ordered)
    if kind == "rf":
        estimator: ForestModel | BoostedModel | ConstantModel = train_forest(
            x, y, cfg, threads, logger
        )
    elif kind == "gbm":
        estimator = train_boosted(x, y, cfg, logger)
    else:
        raise DataError("invalid_baseline", f"未知的基线模型: {kind}")
    logger.info(f"基线 {kind} 训练完成: {len(ordered)} 个样本, {featurizer.width} 维特征")
    return BaselineModel(kind, featurizer, estimator, cfg)


def save_baseline(path: Path | str, model: BaselineModel) -> None:
    container: dict[str, Any] = {
        "format": BASELINE_FORMAT,
        "kind": model.kind,
        "config": asdict(model.config),
        "vocabulary": list(model.featurizer.vocab.groups),
        "labels": [model.featurizer.vocab.label(g) for g in model.featurizer.vocab.groups],
        "featurizer": model.featurizer.state(),
        "estimator": model.estimator,
    }
    joblib.dump(container, Path(path))


def load_baseline(path: Path | str) -> BaselineModel:
    container = joblib.load(Path(path))
    if not isinstance(container, dict) or container.get("format") != BASELINE_FORMAT:
        raise DataError("invalid_model_file", f"{path} 不是基线模型文件")
    groups = container["vocabulary"]
    vocab = Vocabulary(groups=tuple(groups), labels=dict(zip(groups, container["labels"])))
    featurizer = Featurizer(vocab, **container["featurizer"])
    return BaselineModel(
        container["kind"], featurizer, container["estimator"], TreeEnsembleConfig(**container["config"])
    )
