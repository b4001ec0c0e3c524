"""词表与关系矩阵 - 模型、基线与解释模块共享的数据类型"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .domain import CodeMap, read_table
from .error_utils import DataError

VOCABULARY_COLUMNS = ["index", "group", "label"]


@dataclass(frozen=True)
class Vocabulary:
    """分组 id 与 [0, V) 下标之间的双射，顺序随模型一起持久化"""

    groups: tuple[str, ...]
    labels: dict[str, str] = field(default_factory=dict, compare=False, hash=False)
    _index: dict[str, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        if len(set(self.groups)) != len(self.groups):
            raise DataError("invalid_vocabulary", "词表中存在重复分组")
        object.__setattr__(self, "_index", {g: i for i, g in enumerate(self.groups)})

    @classmethod
    def from_code_map(cls, code_map: CodeMap) -> "Vocabulary":
        return cls(groups=tuple(code_map.groups), labels=code_map.labels())

    def __len__(self) -> int:
        return len(self.groups)

    def __contains__(self, group: object) -> bool:
        return group in self._index

    def index(self, group: str) -> int:
        return self._index[group]

    def label(self, group_or_index: str | int) -> str:
        group = self.groups[group_or_index] if isinstance(group_or_index, int) else group_or_index
        return self.labels.get(group, group)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[i, g, self.label(g)] for i, g in enumerate(self.groups)], columns=VOCABULARY_COLUMNS
        )

    @classmethod
    def load(cls, path: Path | str) -> "Vocabulary":
        frame = read_table(path, VOCABULARY_COLUMNS)
        frame = frame.assign(index=frame["index"].astype(int)).sort_values("index")
        if frame["index"].tolist() != list(range(len(frame))):
            raise DataError("invalid_vocabulary", f"{path} 的下标不连续")
        return cls(groups=tuple(frame["group"]), labels=dict(zip(frame["group"], frame["label"])))


class RelationKind(str, Enum):
    PER_PATIENT = "per_patient"
    GROUP_MEAN_POSITIVE = "group_mean_positive"
    GROUP_MEAN_NEGATIVE = "group_mean_negative"
    WEIGHT_DIFFERENCE = "weight_difference"


@dataclass
class RelationMatrix:
    """与词表对齐的 V×V 加权邻接（稀疏存储）"""

    values: sp.csr_matrix
    vocab: Vocabulary
    kind: RelationKind = RelationKind.PER_PATIENT

    def __post_init__(self) -> None:
        self.values = sp.csr_matrix(self.values, dtype=np.float64)
        size = len(self.vocab)
        if self.values.shape != (size, size):
            raise DataError(
                "shape_mismatch",
                f"关系矩阵形状 {self.values.shape} 与词表大小 {size} 不一致",
            )
        if not np.all(np.isfinite(self.values.data)):
            raise DataError("non_finite_relation", "关系矩阵包含非有限值")

    @property
    def dense(self) -> np.ndarray:
        return self.values.toarray()

    def is_symmetric(self) -> bool:
        return (self.values != self.values.T).nnz == 0

    def triplets(self) -> pd.DataFrame:
        """按 (i, j) 排序的非零三元组"""
        coo = self.values.tocoo()
        frame = pd.DataFrame({"i": coo.row, "j": coo.col, "weight": coo.data})
        frame = frame.loc[frame["weight"] != 0]
        return frame.sort_values(["i", "j"]).reset_index(drop=True)
