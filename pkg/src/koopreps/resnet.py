"""Residual MLP: definition, training, evaluation and representation capture."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .datasets import Dataset
from .errors import ArgumentError, TrainingError

log = logging.getLogger(__name__)

EVAL_BATCH = 4096


@dataclass
class RepresentationSet:
    features: np.ndarray
    labels: np.ndarray
    layer: int

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class ResidualMlp:
    input_layer: nn.Dense
    blocks: list[nn.Residual]
    head: nn.Dense

    def __post_init__(self):
        width = self.input_layer.n_out
        for i, b in enumerate(self.blocks):
            if b.n_in != width:
                raise ArgumentError(f"block {i} has width {b.n_in}, expected {width}")
        if self.head.n_in != width:
            raise ArgumentError(f"head expects {self.head.n_in} inputs, width is {width}")

    @classmethod
    def init(cls, d_in: int, width: int, n_blocks: int, n_classes: int, seed: int = 0,
             dtype=np.float32) -> "ResidualMlp":
        rng = np.random.default_rng(seed)
        inp = nn.Dense.init(d_in, width, "relu", rng, dtype)
        blocks = [nn.Residual(nn.Dense.init(width, width, "relu", rng, dtype)) for _ in range(n_blocks)]
        head = nn.Dense.init(width, n_classes, "identity", rng, dtype)
        return cls(inp, blocks, head)

    @property
    def layers(self) -> list:
        return [self.input_layer, *self.blocks, self.head]

    @property
    def width(self) -> int:
        return self.input_layer.n_out

    @property
    def d_in(self) -> int:
        return self.input_layer.n_in

    @property
    def num_classes(self) -> int:
        return self.head.n_out

    @property
    def dtype(self):
        return self.head.weight.dtype

    def copy(self) -> "ResidualMlp":
        return ResidualMlp(self.input_layer.copy(), [b.copy() for b in self.blocks], self.head.copy())

    def representations(self, x: np.ndarray) -> list[np.ndarray]:
        """L0 (input layer output) followed by every block output."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ArgumentError(f"expected input with {self.d_in} columns, got {x.shape}")
        h, _ = nn.dense_forward(self.input_layer, x)
        reps = [h]
        for block in self.blocks:
            h = res_block_forward(block, h)
            reps.append(h)
        return reps

    def head_logits(self, rep: np.ndarray) -> np.ndarray:
        rep = np.asarray(rep, dtype=self.dtype)
        return nn.dense_forward(self.head, rep)[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        out = []
        for start in range(0, len(x), EVAL_BATCH):
            out.append(self.head_logits(self.representations(x[start:start + EVAL_BATCH])[-1]))
        return np.concatenate(out)


def res_block_forward(block: nn.Residual, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != block.n_in:
        raise ArgumentError(f"block expects {block.n_in} columns, got {x.shape}")
    branch, _ = nn.dense_forward(block.inner, x)
    return x + branch


@dataclass
class MlpTrainConfig:
    epochs: int = 500
    batch_size: int = 512
    peak_lr: float = 0.1
    base_fraction: float = 1.0 / 25.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0


@dataclass
class Accuracy:
    overall: float
    per_class: dict[int, float] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
        }


def accuracy_from_predictions(pred: np.ndarray, labels: np.ndarray,
                              num_classes: int | None = None) -> Accuracy:
    labels = np.asarray(labels)
    pred = np.asarray(pred)
    if num_classes is None:
        num_classes = int(max(labels.max(), pred.max())) + 1
    correct = pred == labels
    per_class, counts = {}, {}
    for c in range(num_classes):
        mask = labels == c
        counts[c] = int(mask.sum())
        if counts[c]:
            per_class[c] = 100.0 * float(correct[mask].mean())
    return Accuracy(100.0 * float(correct.mean()), per_class, counts)


def evaluate(model: ResidualMlp, data: Dataset) -> Accuracy:
    pred = np.argmax(model.logits(data.features), axis=1)
    return accuracy_from_predictions(pred, data.labels, model.num_classes)


def train_mlp(model: ResidualMlp, train: Dataset, cfg: MlpTrainConfig,
              test: Dataset | None = None) -> tuple[ResidualMlp, list[dict]]:
    """SGD-momentum with a single triangular LR cycle and cross-entropy.

    Returns a trained copy of ``model`` and one metrics row per epoch.
    """
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    n = train.n
    x_all = np.asarray(train.features, dtype=model.dtype)
    y_all = train.labels
    steps_per_epoch = -(-n // cfg.batch_size)
    schedule = nn.CyclicLrSchedule(cfg.peak_lr, cfg.epochs * steps_per_epoch, cfg.base_fraction)
    opt = nn.SgdMomentum(cfg.momentum, cfg.weight_decay)
    params = nn.parameters(model.layers)
    history: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            logits, tape = nn.forward(model.layers, xb)
            loss, dlogits = nn.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}", epoch=epoch)
            grads = nn.backward(tape, dlogits)
            opt.step(params, grads.flat(), schedule(step))
            step += 1
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == yb).sum())
        row = {"epoch": epoch, "loss": total_loss / n, "train_acc": 100.0 * correct / n}
        if test is not None:
            row["test_acc"] = evaluate(model, test).overall
        history.append(row)
        if epoch % max(1, cfg.epochs // 10) == 0 or epoch == cfg.epochs - 1:
            log.info("mlp epoch %d %s", epoch, row)
    return model, history


def capture_representations(model: ResidualMlp, data: Dataset) -> list[RepresentationSet]:
    chunks: list[list[np.ndarray]] = []
    for start in range(0, data.n, EVAL_BATCH):
        chunks.append(model.representations(data.features[start:start + EVAL_BATCH]))
    return [
        RepresentationSet(np.concatenate([c[i] for c in chunks]), data.labels.copy(), layer=i)
        for i in range(len(model.blocks) + 1)
    ]
