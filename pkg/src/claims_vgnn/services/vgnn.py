"""VGNN 模型 - 编码器图注意力、变分正则、解码器图注意力与线性输出层

每个患者的分组编码构成一张带自环的完全图。批量计算时把图补齐到 B×N，
用掩码屏蔽补齐节点：补齐列不参与注意力，补齐行不参与读出与 KL。
全部计算使用 float64。
"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F
from torch import nn

from .cohort import CohortSample
from .error_utils import DataError, NumericalError
from .relations import RelationKind, RelationMatrix, Vocabulary

DTYPE = torch.float64
LEAKY_SLOPE = 0.2
PROBABILITY_CLAMP = 1e-7
MODEL_FORMAT = "claims-vgnn/vgnn"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    dropout: float = 0.1
    epochs: int = 200
    layers: int = 2
    heads: int = 1
    beta: float = 0.002
    embed_dim: int = 16
    val_fraction: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.learning_rate <= 0:
            problems.append("train.learning_rate 必须为正数")
        if self.batch_size < 1:
            problems.append("train.batch_size 必须为正整数")
        if not 0 <= self.dropout < 1:
            problems.append("train.dropout 必须在 [0, 1) 内")
        if self.epochs < 0:
            problems.append("train.epochs 不能为负数")
        if self.layers < 1:
            problems.append("train.layers 必须 >= 1")
        if self.heads != 1:
            problems.append("train.heads 只支持单头注意力 (1)")
        if self.beta < 0:
            problems.append("train.beta 不能为负数")
        if self.embed_dim < 2:
            problems.append("train.embed_dim 必须 >= 2")
        if not 0 <= self.val_fraction < 1:
            problems.append("train.val_fraction 必须在 [0, 1) 内")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            problems.append("train 的 Adam 参数无效")
        return problems


@dataclass(frozen=True)
class PatientGraph:
    node_code_indices: tuple[int, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.node_code_indices:
            raise DataError("empty_graph", "患者图没有任何节点")
        if any(b <= a for a, b in zip(self.node_code_indices, self.node_code_indices[1:])):
            raise DataError("invalid_graph", "节点下标必须严格递增")
        if len(self.counts) != len(self.node_code_indices) or min(self.counts) < 1:
            raise DataError("invalid_graph", "节点计数必须为正且与节点一一对应")

    @property
    def size(self) -> int:
        return len(self.node_code_indices)


def build_graph(
    sample: CohortSample, vocab: Vocabulary, logger: logging.Logger | None = None
) -> PatientGraph:
    """由样本的分组编码构建患者图；词表外分组被丢弃"""
    logger = logger or logging.getLogger(__name__)
    nodes: dict[int, int] = {}
    dropped = 0
    for group, count in sample.grouped_codes:
        if count < 1:
            continue
        if group in vocab:
            index = vocab.index(group)
            nodes[index] = nodes.get(index, 0) + count
        else:
            dropped += 1
    if dropped:
        logger.warning(f"患者 {sample.patient_id} 有 {dropped} 个分组不在词表中，已丢弃")
    if not nodes:
        raise DataError("empty_graph", f"患者 {sample.patient_id} 没有任何词表内分组")
    ordered = sorted(nodes)
    return PatientGraph(tuple(ordered), tuple(nodes[i] for i in ordered))


def collate(graphs: list[PatientGraph]) -> tuple[torch.Tensor, torch.Tensor]:
    """把若干图补齐为 (indices B×N, mask B×N)"""
    width = max(graph.size for graph in graphs)
    indices = torch.zeros((len(graphs), width), dtype=torch.long)
    mask = torch.zeros((len(graphs), width), dtype=torch.bool)
    for row, graph in enumerate(graphs):
        indices[row, : graph.size] = torch.tensor(graph.node_code_indices, dtype=torch.long)
        mask[row, : graph.size] = True
    return indices, mask


@dataclass
class ForwardOutput:
    """单个患者图的前向结果（已去掉补齐部分）"""

    probability: float
    kl: float
    adjacency: np.ndarray
    node_states: np.ndarray
    encoder_attention: list[np.ndarray]


@dataclass
class BatchOutput:
    probability: torch.Tensor
    kl: torch.Tensor
    adjacency: torch.Tensor
    node_states: torch.Tensor
    encoder_attention: list[torch.Tensor]
    mask: torch.Tensor


def _check_finite(tensor: torch.Tensor, layer: str) -> None:
    if not torch.isfinite(tensor).all():
        raise NumericalError("numerical_overflow", f"{layer} 层出现非有限值", {"layer": layer})


def _uniform(shape: tuple[int, ...], fan_in: int, generator: torch.Generator) -> nn.Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    values = torch.rand(shape, generator=generator, dtype=DTYPE) * (2 * bound) - bound
    return nn.Parameter(values)


class VGNN(nn.Module):
    """编码器 L 层图注意力 -> 变分层 -> 解码器图注意力 -> 均值读出 + 线性输出"""

    def __init__(self, vocab_size: int, config: TrainConfig):
        super().__init__()
        if vocab_size < 1:
            raise DataError("invalid_vocabulary", "词表不能为空")
        self.config = config
        self.vocab_size = vocab_size
        d = config.embed_dim
        generator = torch.Generator().manual_seed(config.seed % 2**63)

        self.embedding = _uniform((vocab_size, d), d, generator)
        self.encoder_weights = nn.ParameterList(
            [_uniform((d, d), d, generator) for _ in range(config.layers)]
        )
        self.encoder_attention = nn.ParameterList(
            [_uniform((2 * d,), 2 * d, generator) for _ in range(config.layers)]
        )
        self.w_mu = _uniform((d, d), d, generator)
        self.w_logvar = _uniform((d, d), d, generator)
        self.w_dec = _uniform((d, d), d, generator)
        self.a_dec = _uniform((2 * d,), 2 * d, generator)
        self.w_out = _uniform((d,), d, generator)
        self.b = nn.Parameter(torch.zeros((), dtype=DTYPE))

    @staticmethod
    def attend(
        h: torch.Tensor, weight: torch.Tensor, attention: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """单头图注意力：返回 (ELU(αWh), α)"""
        d = weight.shape[1]
        wh = h @ weight
        scores = (wh @ attention[:d]).unsqueeze(2) + (wh @ attention[d:]).unsqueeze(1)
        scores = F.leaky_relu(scores, LEAKY_SLOPE)
        scores = scores.masked_fill(~mask.unsqueeze(1), -math.inf)
        scores = scores - scores.max(dim=-1, keepdim=True).values
        weights = torch.exp(scores)
        alpha = weights / weights.sum(dim=-1, keepdim=True)
        return F.elu(alpha @ wh), alpha

    def _dropout(self, h: torch.Tensor, generator: torch.Generator | None) -> torch.Tensor:
        p = self.config.dropout
        if p == 0:
            return h
        keep = torch.rand(h.shape, generator=generator, dtype=DTYPE) >= p
        return h * keep / (1 - p)

    def run(
        self,
        indices: torch.Tensor,
        mask: torch.Tensor,
        train: bool = False,
        generator: torch.Generator | None = None,
        noise: torch.Tensor | None = None,
    ) -> BatchOutput:
        """批量前向；train=True 时启用 dropout 与重参数化噪声"""
        maskf = mask.to(DTYPE)
        n_nodes = maskf.sum(dim=1)

        h = self.embedding[indices] * maskf.unsqueeze(-1)
        encoder_attention = []
        for layer, (weight, attention) in enumerate(
            zip(self.encoder_weights, self.encoder_attention)
        ):
            h, alpha = self.attend(h, weight, attention, mask)
            _check_finite(h, f"encoder_{layer + 1}")
            if train:
                h = self._dropout(h, generator)
            encoder_attention.append(alpha)

        mu = h @ self.w_mu
        logvar = h @ self.w_logvar
        if train:
            eps = noise if noise is not None else torch.randn(mu.shape, generator=generator, dtype=DTYPE)
            z = mu + torch.exp(0.5 * logvar) * eps
        else:
            z = mu
        kl_nodes = 0.5 * (torch.exp(logvar) + mu.pow(2) - 1 - logvar).sum(dim=-1)
        kl = (kl_nodes * maskf).sum(dim=1) / n_nodes
        _check_finite(z, "variational")
        _check_finite(kl, "variational")

        u, adjacency = self.attend(z, self.w_dec, self.a_dec, mask)
        _check_finite(u, "decoder")

        readout = (u * maskf.unsqueeze(-1)).sum(dim=1) / n_nodes.unsqueeze(-1)
        logit = readout @ self.w_out + self.b
        probability = torch.sigmoid(logit)
        _check_finite(probability, "output")
        return BatchOutput(probability, kl, adjacency, u, encoder_attention, mask)

    def shapes(self) -> dict[str, list[int]]:
        return {name: list(p.shape) for name, p in self.named_parameters()}


def forward(
    model: VGNN,
    graph: PatientGraph,
    mode: str = "infer",
    generator: torch.Generator | None = None,
) -> ForwardOutput:
    """单个患者图的前向，mode ∈ {train, infer}"""
    if mode not in ("train", "infer"):
        raise DataError("invalid_mode", f"未知的前向模式: {mode}")
    indices, mask = collate([graph])
    with torch.no_grad():
        out = model.run(indices, mask, train=mode == "train", generator=generator)
    n = graph.size
    return ForwardOutput(
        probability=float(out.probability[0]),
        kl=float(out.kl[0]),
        adjacency=out.adjacency[0, :n, :n].numpy().copy(),
        node_states=out.node_states[0, :n].numpy().copy(),
        encoder_attention=[a[0, :n, :n].numpy().copy() for a in out.encoder_attention],
    )


def loss(
    probability: torch.Tensor, label: torch.Tensor, kl: torch.Tensor, beta: float
) -> torch.Tensor:
    """BCE(p, y) + beta * kl，对批次取平均；p 先截断到 [1e-7, 1 - 1e-7]"""
    p = probability.clamp(PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP)
    bce = -(label * torch.log(p) + (1 - label) * torch.log(1 - p))
    return (bce + beta * kl).mean()


def batch_loss(
    model: VGNN,
    graphs: list[PatientGraph],
    labels: list[int],
    train: bool = True,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    indices, mask = collate(graphs)
    out = model.run(indices, mask, train=train, generator=generator)
    target = torch.tensor(labels, dtype=DTYPE)
    return loss(out.probability, target, out.kl, model.config.beta)


def compute_gradients(
    model: VGNN,
    graphs: list[PatientGraph],
    labels: list[int],
    train: bool = True,
    generator: torch.Generator | None = None,
) -> tuple[float, dict[str, torch.Tensor]]:
    """批次平均损失对每个参数张量的精确反向梯度；噪声在一次前向内视为常数"""
    if not graphs:
        raise DataError("empty_batch", "批次不能为空")
    value = batch_loss(model, graphs, labels, train=train, generator=generator)
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(value, params, allow_unused=True)
    gradients = {
        name: (g if g is not None else torch.zeros_like(p)) for name, p, g in zip(names, params, grads)
    }
    return float(value.detach()), gradients


def predict(model: VGNN, graphs: list[PatientGraph], batch_size: int = 256) -> np.ndarray:
    """推断模式下的概率（无噪声、无 dropout）"""
    outputs = []
    with torch.no_grad():
        for start in range(0, len(graphs), batch_size):
            indices, mask = collate(graphs[start : start + batch_size])
            outputs.append(model.run(indices, mask, train=False).probability.numpy())
    return np.concatenate(outputs) if outputs else np.zeros(0)


def extract_adjacency(
    model: VGNN, graph: PatientGraph, vocab: Vocabulary, source: str = "decoder"
) -> RelationMatrix:
    """推断模式下的注意力矩阵，嵌入到全局 V×V 坐标（其余位置为 0）"""
    out = forward(model, graph, mode="infer")
    if source == "decoder":
        block = out.adjacency
    elif source == "encoder":
        block = out.encoder_attention[-1]
    else:
        raise DataError("invalid_adjacency_source", f"未知的邻接来源: {source}")
    nodes = np.asarray(graph.node_code_indices)
    rows = np.repeat(nodes, len(nodes))
    cols = np.tile(nodes, len(nodes))
    values = sp.csr_matrix((block.ravel(), (rows, cols)), shape=(len(vocab), len(vocab)))
    return RelationMatrix(values=values, vocab=vocab, kind=RelationKind.PER_PATIENT)


# ========== 模型文件 ==========


def save_model(path: Path | str, model: VGNN, vocab: Vocabulary) -> None:
    """自描述容器：配置、词表顺序、参数形状与参数张量"""
    torch.save(
        {
            "format": MODEL_FORMAT,
            "config": asdict(model.config),
            "vocabulary": list(vocab.groups),
            "labels": [vocab.label(g) for g in vocab.groups],
            "shapes": model.shapes(),
            "state": model.state_dict(),
        },
        Path(path),
    )


def load_model(path: Path | str) -> tuple[VGNN, Vocabulary]:
    """加载模型；形状与声明不一致时失败"""
    path = Path(path)
    container: dict[str, Any] = torch.load(path, weights_only=True)
    if container.get("format") != MODEL_FORMAT:
        raise DataError("invalid_model_file", f"{path} 不是 VGNN 模型文件")
    groups = container["vocabulary"]
    vocab = Vocabulary(groups=tuple(groups), labels=dict(zip(groups, container["labels"])))
    model = VGNN(len(vocab), TrainConfig(**container["config"]))

    declared = container["shapes"]
    expected = model.shapes()
    actual = {name: list(t.shape) for name, t in container["state"].items()}
    if declared != expected or actual != expected:
        raise DataError(
            "model_shape_mismatch",
            f"{path} 的参数形状与配置不一致",
            {"declared": declared, "expected": expected},
        )
    model.load_state_dict(container["state"])
    return model, vocab
