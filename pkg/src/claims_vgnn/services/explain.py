"""关系重要性 - 对称化、分组均值、权重差矩阵 W 与关系排名

流程：逐患者提取邻接（推断模式）-> 对称化 ½(A + Aᵀ) -> 按标签分组求均值
-> W = Ā⁺ - Ā⁻ -> 上三角中最大/最小的 k 个关系。
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .cohort import CohortSample
from .error_utils import DataError
from .relations import RelationKind, RelationMatrix, Vocabulary
from .vgnn import VGNN, build_graph, extract_adjacency

RELATIONS_TOP_COLUMNS = ["sign", "rank", "group_a_label", "group_b_label", "weight"]
PERMUTATION_COLUMNS = [
    "permutation",
    "group_a",
    "group_b",
    "group_a_label",
    "group_b_label",
    "rank",
    "weight",
]
MEAN_MODES = ("group_size", "support")
ADJACENCY_SOURCES = ("decoder", "encoder")


@dataclass(frozen=True)
class ExplainConfig:
    top_k: int = 5
    adjacency_source: str = "decoder"
    mean_mode: str = "group_size"
    include_self: bool = False
    permutations: int = 20
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.top_k < 1:
            problems.append("explain.top_k 必须 >= 1")
        if self.adjacency_source not in ADJACENCY_SOURCES:
            problems.append(f"explain.adjacency_source 必须是 {ADJACENCY_SOURCES} 之一")
        if self.mean_mode not in MEAN_MODES:
            problems.append(f"explain.mean_mode 必须是 {MEAN_MODES} 之一")
        if self.permutations < 0:
            problems.append("explain.permutations 不能为负数")
        return problems


@dataclass(frozen=True)
class RankedRelation:
    group_a: str
    group_b: str
    group_a_label: str
    group_b_label: str
    weight: float
    rank: int
    sign: str


def symmetrize(matrix: RelationMatrix) -> RelationMatrix:
    """½(A + Aᵀ)，结果严格对称且幂等"""
    values = (matrix.values + matrix.values.T) * 0.5
    return RelationMatrix(values=values, vocab=matrix.vocab, kind=matrix.kind)


def _check_vocab(matrices: list[RelationMatrix]) -> Vocabulary:
    vocab = matrices[0].vocab
    for matrix in matrices[1:]:
        if matrix.vocab.groups != vocab.groups:
            raise DataError("vocabulary_mismatch", "关系矩阵的词表不一致")
    return vocab


def group_mean(
    matrices: list[RelationMatrix],
    kind: RelationKind = RelationKind.GROUP_MEAN_POSITIVE,
    mean_mode: str = "group_size",
) -> RelationMatrix:
    """逐元素均值；group_size 模式下缺失位置按 0 计入，support 模式只除以非零出现次数"""
    if not matrices:
        raise DataError("empty_group", "分组中没有任何关系矩阵")
    if mean_mode not in MEAN_MODES:
        raise DataError("invalid_mean_mode", f"未知的均值模式: {mean_mode}")
    vocab = _check_vocab(matrices)

    total = sp.csr_matrix(matrices[0].values.shape, dtype=np.float64)
    support = sp.csr_matrix(matrices[0].values.shape, dtype=np.float64)
    for matrix in matrices:
        total = total + matrix.values
        if mean_mode == "support":
            pattern = matrix.values.copy()
            pattern.data = (pattern.data != 0).astype(np.float64)
            support = support + pattern

    if mean_mode == "group_size":
        values = total / len(matrices)
    else:
        coo = total.tocoo()
        counts = np.asarray(support[coo.row, coo.col]).ravel()
        data = np.divide(coo.data, counts, out=np.zeros_like(coo.data), where=counts > 0)
        values = sp.csr_matrix((data, (coo.row, coo.col)), shape=total.shape)
    return RelationMatrix(values=values, vocab=vocab, kind=kind)


def weight_difference(positive: RelationMatrix, negative: RelationMatrix) -> RelationMatrix:
    """W = Ā⁺ - Ā⁻"""
    _check_vocab([positive, negative])
    values = positive.values - negative.values
    values.eliminate_zeros()
    return RelationMatrix(values=values, vocab=positive.vocab, kind=RelationKind.WEIGHT_DIFFERENCE)


def _ranked(w: RelationMatrix, sign: str, include_self: bool) -> list[tuple[float, int, int]]:
    """(weight, i, j)，按权重排序，同权重按标签字典序，标签相同再按下标"""
    if sign not in ("positive", "negative"):
        raise DataError("invalid_sign", f"未知的符号: {sign}")
    coo = sp.triu(w.values, k=0 if include_self else 1).tocoo()
    vocab = w.vocab
    candidates = []
    for i, j, weight in zip(coo.row, coo.col, coo.data):
        if (sign == "positive" and weight > 0) or (sign == "negative" and weight < 0):
            a, b = sorted((int(i), int(j)), key=lambda index: (vocab.label(index), index))
            candidates.append((float(weight), a, b))
    direction = -1.0 if sign == "positive" else 1.0
    candidates.sort(key=lambda c: (direction * c[0], vocab.label(c[1]), vocab.label(c[2]), c[1], c[2]))
    return candidates


def top_relations(
    w: RelationMatrix,
    k: int,
    sign: str = "positive",
    include_self: bool = False,
    logger: logging.Logger | None = None,
) -> list[RankedRelation]:
    """上三角中权重最大（positive）或最负（negative）的 k 个关系，每个无序对只出现一次"""
    logger = logger or logging.getLogger(__name__)
    if k < 1:
        raise DataError("invalid_top_k", "k 必须 >= 1")
    candidates = _ranked(w, sign, include_self)
    if len(candidates) < k:
        logger.warning(f"{sign} 关系只有 {len(candidates)} 个，少于请求的 {k} 个")
    vocab = w.vocab
    return [
        RankedRelation(vocab.groups[a], vocab.groups[b], vocab.label(a), vocab.label(b), weight, rank, sign)
        for rank, (weight, a, b) in enumerate(candidates[:k], start=1)
    ]


@dataclass
class ExplanationReport:
    w: RelationMatrix
    positive_mean: RelationMatrix
    negative_mean: RelationMatrix
    positive: list[RankedRelation]
    negative: list[RankedRelation]
    adjacencies: list[RelationMatrix] = field(default_factory=list, repr=False)
    labels: list[int] = field(default_factory=list, repr=False)

    def relations_frame(self) -> pd.DataFrame:
        rows = [
            [r.sign, r.rank, r.group_a_label, r.group_b_label, r.weight]
            for r in self.positive + self.negative
        ]
        return pd.DataFrame(rows, columns=RELATIONS_TOP_COLUMNS)


def weight_matrix(
    adjacencies: list[RelationMatrix], labels: list[int], mean_mode: str = "group_size"
) -> tuple[RelationMatrix, RelationMatrix, RelationMatrix]:
    """由对称化后的逐患者邻接计算 (W, Ā⁺, Ā⁻)"""
    positives = [a for a, y in zip(adjacencies, labels) if y == 1]
    negatives = [a for a, y in zip(adjacencies, labels) if y == 0]
    pos = group_mean(positives, RelationKind.GROUP_MEAN_POSITIVE, mean_mode)
    neg = group_mean(negatives, RelationKind.GROUP_MEAN_NEGATIVE, mean_mode)
    return weight_difference(pos, neg), pos, neg


def explain_cohort(
    model: VGNN,
    samples: list[CohortSample],
    vocab: Vocabulary,
    cfg: ExplainConfig,
    logger: logging.Logger | None = None,
) -> ExplanationReport:
    """匹配训练队列上的关系重要性报告"""
    logger = logger or logging.getLogger(__name__)
    ordered = sorted(samples, key=lambda s: s.patient_id)
    adjacencies = [
        symmetrize(extract_adjacency(model, build_graph(s, vocab, logger), vocab, cfg.adjacency_source))
        for s in ordered
    ]
    labels = [s.label for s in ordered]
    w, pos, neg = weight_matrix(adjacencies, labels, cfg.mean_mode)
    report = ExplanationReport(
        w=w,
        positive_mean=pos,
        negative_mean=neg,
        positive=top_relations(w, cfg.top_k, "positive", cfg.include_self, logger),
        negative=top_relations(w, cfg.top_k, "negative", cfg.include_self, logger),
        adjacencies=adjacencies,
        labels=labels,
    )
    logger.info(
        f"关系重要性: {sum(labels)} 病例 / {len(labels) - sum(labels)} 对照, "
        f"W 非零项 {w.values.nnz}"
    )
    return report


def _group_index(vocab: Vocabulary, group: str) -> int:
    if group not in vocab:
        raise DataError("unknown_group", f"词表中没有分组 {group}")
    return vocab.index(group)


def positive_rank(w: RelationMatrix, group_a: str, group_b: str) -> int | None:
    """分组 id 组成的无序对在全部正向关系中的名次；非正时返回 None"""
    pair = {_group_index(w.vocab, group_a), _group_index(w.vocab, group_b)}
    for rank, (_, a, b) in enumerate(_ranked(w, "positive", include_self=False), start=1):
        if {a, b} == pair:
            return rank
    return None


def permutation_null(
    report: ExplanationReport,
    pairs: list[tuple[str, str]],
    cfg: ExplainConfig,
) -> pd.DataFrame:
    """打乱标签后重算 W（复用已提取的邻接），记录指定分组对的名次分布"""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    labels = np.asarray(report.labels)
    vocab = report.w.vocab
    indexed = [
        sorted((_group_index(vocab, a), _group_index(vocab, b)), key=lambda i: (vocab.label(i), i))
        for a, b in pairs
    ]
    rows = []
    for permutation in range(1, cfg.permutations + 1):
        shuffled = rng.permutation(labels).tolist()
        w, _, _ = weight_matrix(report.adjacencies, shuffled, cfg.mean_mode)
        dense = w.dense
        for i, j in indexed:
            group_a, group_b = vocab.groups[i], vocab.groups[j]
            rank = positive_rank(w, group_a, group_b)
            rows.append(
                [
                    permutation,
                    group_a,
                    group_b,
                    vocab.label(i),
                    vocab.label(j),
                    rank if rank is not None else "",
                    dense[i, j],
                ]
            )
    return pd.DataFrame(rows, columns=PERMUTATION_COLUMNS)
