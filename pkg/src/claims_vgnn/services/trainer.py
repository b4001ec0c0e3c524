"""VGNN 训练 - 小批量 Adam、按 epoch 确定性打乱、验证集 AUROC"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
from sklearn.model_selection import train_test_split

from .cohort import CohortSample
from .error_utils import ConfigError, DataError, NumericalError
from .evaluation import auroc
from .relations import Vocabulary
from .vgnn import VGNN, PatientGraph, TrainConfig, build_graph, compute_gradients, predict

TRAINING_LOG_COLUMNS = ["epoch", "mean_loss", "val_auroc", "seconds"]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    val_auroc: float
    seconds: float


@dataclass
class TrainResult:
    model: VGNN
    history: list[EpochRecord] = field(default_factory=list)
    n_train: int = 0
    n_val: int = 0

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[r.epoch, r.mean_loss, r.val_auroc, round(r.seconds, 3)] for r in self.history],
            columns=TRAINING_LOG_COLUMNS,
        )


def build_graphs(
    samples: list[CohortSample], vocab: Vocabulary, logger: logging.Logger | None = None
) -> list[PatientGraph]:
    return [build_graph(sample, vocab, logger) for sample in samples]


def _validation_split(
    samples: list[CohortSample], cfg: TrainConfig
) -> tuple[list[CohortSample], list[CohortSample]]:
    if cfg.val_fraction == 0:
        return samples, []
    labels = [s.label for s in samples]
    n_val = int(math.ceil(len(samples) * cfg.val_fraction))
    if min(labels.count(0), labels.count(1)) < 2 or n_val < 2 or len(samples) - n_val < 2:
        return samples, []
    fit, val = train_test_split(
        samples, test_size=cfg.val_fraction, stratify=labels, random_state=cfg.seed % 2**32
    )
    return fit, val


class VGNNTrainer:
    """VGNN 训练器"""

    def __init__(
        self,
        vocab: Vocabulary,
        config: TrainConfig,
        threads: int = 1,
        logger: logging.Logger | None = None,
    ):
        problems = config.validate()
        if problems:
            raise ConfigError("invalid_train_config", "; ".join(problems))
        self.vocab = vocab
        self.config = config
        self.threads = threads
        self.logger = logger or logging.getLogger(__name__)

    def train(self, samples: list[CohortSample]) -> TrainResult:
        cfg = self.config
        labels = {s.label for s in samples}
        if len(samples) < 2 or labels != {0, 1}:
            raise DataError("degenerate_training_set", "训练至少需要 2 个样本且包含两个类别")
        if self.threads > 0:
            torch.set_num_threads(self.threads)

        ordered = sorted(samples, key=lambda s: s.patient_id)
        fit, val = _validation_split(ordered, cfg)
        fit_graphs = build_graphs(fit, self.vocab, self.logger)
        fit_labels = [s.label for s in fit]
        val_graphs = build_graphs(val, self.vocab, self.logger)
        val_labels = np.array([s.label for s in val])

        model = VGNN(len(self.vocab), cfg)
        optimizer = torch.optim.Adam(
            model.parameters(),
            lr=cfg.learning_rate,
            betas=(cfg.adam_beta1, cfg.adam_beta2),
            eps=cfg.adam_eps,
        )
        shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
        noise = torch.Generator().manual_seed((cfg.seed + 1) % 2**63)
        params = dict(model.named_parameters())

        result = TrainResult(model=model, n_train=len(fit), n_val=len(val))
        self.logger.info(
            f"开始训练 VGNN: {len(fit)} 个训练样本, {len(val)} 个验证样本, "
            f"词表 {len(self.vocab)}, {cfg.epochs} 个 epoch"
        )
        for epoch in range(1, cfg.epochs + 1):
            started = time.perf_counter()
            order = shuffle_rng.permutation(len(fit))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                try:
                    value, grads = compute_gradients(
                        model,
                        [fit_graphs[i] for i in batch],
                        [fit_labels[i] for i in batch],
                        train=True,
                        generator=noise,
                    )
                except NumericalError as error:
                    error.context["epoch"] = epoch
                    raise
                if not math.isfinite(value):
                    raise NumericalError(
                        "training_diverged", f"第 {epoch} 个 epoch 损失非有限", {"epoch": epoch}
                    )
                optimizer.zero_grad(set_to_none=True)
                for name, grad in grads.items():
                    params[name].grad = grad
                optimizer.step()
                total += value * len(batch)

            val_auroc = math.nan
            if val_graphs:
                val_auroc = auroc(predict(model, val_graphs), val_labels)
            record = EpochRecord(epoch, total / len(fit), val_auroc, time.perf_counter() - started)
            result.history.append(record)
            self.logger.debug(
                f"epoch {epoch}: loss={record.mean_loss:.5f}, val_auroc={record.val_auroc:.4f}"
            )

        if result.history:
            last = result.history[-1]
            self.logger.info(
                f"VGNN 训练完成: 最终损失 {last.mean_loss:.5f}, 验证 AUROC {last.val_auroc:.4f}"
            )
        return result


def train(
    samples: list[CohortSample],
    vocab: Vocabulary,
    cfg: TrainConfig,
    threads: int = 1,
    logger: logging.Logger | None = None,
) -> TrainResult:
    """便捷函数：训练 VGNN 并返回模型与逐 epoch 历史"""
    return VGNNTrainer(vocab, cfg, threads=threads, logger=logger).train(samples)
