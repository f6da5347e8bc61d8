"""Koopman autoencoder surrogate for the first-to-penultimate layer map.

The operator is ``K = exp(G/k)^k``. Since this equals ``exp(G)`` exactly,
training differentiates through ``exp(G)`` and ``k`` only sets the
granularity of :func:`interpolate`. Observables are row vectors, so the
operator acts as ``z @ K.T``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg, nn
from .errors import ArgumentError, NumericalError, TrainingError, UsageError
from .preprocess import PreprocessTransform, apply, invert
from .resnet import Accuracy, ResidualMlp, accuracy_from_predictions

log = logging.getLogger(__name__)

LOSS_NAMES = ("recon", "linear", "state", "dist")
LR_SCHEDULES = ("constant", "cosine", "cyclic")


@dataclass(frozen=True)
class KaeLossWeights:
    recon: float = 1.0
    linear: float = 1.0
    state: float = 1.0
    dist: float = 1.0

    def __post_init__(self):
        for name in LOSS_NAMES:
            if getattr(self, name) < 0:
                raise ArgumentError(f"loss weight {name} must be >= 0")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.recon, self.linear, self.state, self.dist)


@dataclass
class KaeTrainConfig:
    batch_size: int = 1024
    epochs: int = 1000
    lr: float = 1e-1
    weight_decay: float = 5e-4
    weights: KaeLossWeights = field(default_factory=KaeLossWeights)
    seed: int = 0
    schedule: str = "constant"

    def __post_init__(self):
        if self.schedule not in LR_SCHEDULES:
            raise ArgumentError(f"unknown lr schedule {self.schedule!r}; choose from {LR_SCHEDULES}")

    def lr_at(self, step: int, total: int) -> float:
        if self.schedule == "cosine":
            return 0.5 * self.lr * (1.0 + math.cos(math.pi * min(step, total) / max(total, 1)))
        if self.schedule == "cyclic":
            return nn.CyclicLrSchedule(self.lr, total)(step)
        return self.lr


@dataclass
class KaeModel:
    encoder: list[nn.Dense]
    decoder: list[nn.Dense]
    generator: np.ndarray
    k_steps: int = 50
    operator_override: np.ndarray | None = None

    @classmethod
    def init(cls, d: int, hidden: int, observable: int, seed: int = 0, k_steps: int = 50,
             dtype=np.float32, slope: float = nn.DEFAULT_LEAKY_SLOPE) -> "KaeModel":
        rng = np.random.default_rng(seed)
        encoder = [
            nn.Dense.init(d, hidden, "leaky_relu", rng, dtype, slope),
            nn.Dense.init(hidden, observable, "identity", rng, dtype),
        ]
        decoder = [
            nn.Dense.init(observable, hidden, "leaky_relu", rng, dtype, slope),
            nn.Dense.init(hidden, d, "identity", rng, dtype),
        ]
        bound = 1.0 / np.sqrt(observable)
        g = rng.uniform(-bound, bound, size=(observable, observable)).astype(dtype)
        return cls(encoder, decoder, g, k_steps)

    @property
    def d(self) -> int:
        return self.encoder[0].n_in

    @property
    def observable_dim(self) -> int:
        return self.generator.shape[0]

    @property
    def dtype(self):
        return self.generator.dtype

    @property
    def edited(self) -> bool:
        return self.operator_override is not None

    def copy(self) -> "KaeModel":
        override = None if self.operator_override is None else self.operator_override.copy()
        return KaeModel([l.copy() for l in self.encoder], [l.copy() for l in self.decoder],
                        self.generator.copy(), self.k_steps, override)

    def with_operator(self, operator: np.ndarray) -> "KaeModel":
        m = self.copy()
        m.operator_override = np.asarray(operator, dtype=np.float64).copy()
        return m

    @property
    def params(self) -> list[np.ndarray]:
        return nn.parameters(self.encoder) + nn.parameters(self.decoder) + [self.generator]

    def encode(self, x) -> np.ndarray:
        return nn.forward(self.encoder, np.asarray(x, dtype=self.dtype))[0]

    def decode(self, z) -> np.ndarray:
        return nn.forward(self.decoder, np.asarray(z, dtype=self.dtype))[0]


def step_operator(model: KaeModel) -> np.ndarray:
    """One interpolation step, ``exp(G/k)``, in float64."""
    if model.k_steps < 1:
        raise ArgumentError("k_steps must be >= 1")
    return linalg.matrix_exp(np.asarray(model.generator, dtype=np.float64) / model.k_steps)


def koopman_operator(model: KaeModel) -> np.ndarray:
    if model.operator_override is not None:
        return model.operator_override
    return linalg.matrix_power(step_operator(model), model.k_steps)


def check_operator(model: KaeModel, tol: float = 1e-8) -> float:
    """Relative gap between ``exp(G/k)^k`` and ``exp(G)``; raises if above ``tol``."""
    full = linalg.matrix_exp(np.asarray(model.generator, dtype=np.float64))
    stepped = linalg.matrix_power(step_operator(model), model.k_steps)
    gap = float(np.linalg.norm(stepped - full) / max(1.0, np.linalg.norm(full)))
    if not gap <= tol:
        raise NumericalError(f"k-step operator deviates from exp(G) by {gap:.2e}")
    return gap


def advance(model: KaeModel, z: np.ndarray, operator: np.ndarray | None = None) -> np.ndarray:
    k = koopman_operator(model) if operator is None else operator
    return (np.asarray(z, dtype=np.float64) @ k.T).astype(model.dtype)


def predict(model: KaeModel, x_hat_i) -> np.ndarray:
    return model.decode(advance(model, model.encode(x_hat_i)))


def interpolate(model: KaeModel, x_hat_i, m: int) -> np.ndarray:
    if model.edited:
        raise UsageError("interpolation through an edited operator is undefined")
    if not 0 <= m <= model.k_steps:
        raise ArgumentError(f"m={m} outside [0, {model.k_steps}]")
    op = linalg.matrix_power(step_operator(model), m)
    return model.decode(advance(model, model.encode(x_hat_i), op))


@dataclass
class KaeLosses:
    total: float
    recon: float
    linear: float
    state: float
    dist: float

    def to_dict(self) -> dict[str, float]:
        return {"total": self.total, "recon": self.recon, "linear": self.linear,
                "state": self.state, "dist": self.dist}


def _row_sq(a: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, a)


def _losses_and_grads(model: KaeModel, x_i: np.ndarray, x_j: np.ndarray,
                      weights: KaeLossWeights, need_grad: bool = True):
    """All four losses and, optionally, gradients for every parameter.

    Every term is a per-row squared norm averaged over the batch; the
    reconstruction and isometry terms add the i-side and j-side means.
    Uses ``K = exp(G)`` (identical to the k-step form).
    """
    dtype = model.dtype
    x_i = np.asarray(x_i, dtype=dtype)
    x_j = np.asarray(x_j, dtype=dtype)
    if x_i.shape != x_j.shape or x_i.shape[1] != model.d:
        raise ArgumentError(f"pair shapes {x_i.shape}, {x_j.shape} incompatible with d={model.d}")
    n = x_i.shape[0]
    g64 = np.asarray(model.generator, dtype=np.float64)
    k = (model.operator_override if model.operator_override is not None
         else linalg.matrix_exp(g64)).astype(dtype)

    enc, enc_tape = nn.forward(model.encoder, np.concatenate([x_i, x_j]))
    enc_i, enc_j = enc[:n], enc[n:]
    adv = enc_i @ k.T
    dec, dec_tape = nn.forward(model.decoder, np.concatenate([enc, adv]))
    rec_i, rec_j, pred = dec[:n], dec[n:2 * n], dec[2 * n:]

    r_rec_i = rec_i - x_i
    r_rec_j = rec_j - x_j
    r_lin = adv - enc_j
    r_state = pred - x_j
    e_i = _row_sq(x_i) - _row_sq(enc_i)
    e_j = _row_sq(x_j) - _row_sq(enc_j)

    recon = float(_row_sq(r_rec_i).mean() + _row_sq(r_rec_j).mean())
    linear = float(_row_sq(r_lin).mean())
    state = float(_row_sq(r_state).mean())
    dist = float((e_i**2).mean() + (e_j**2).mean())
    w = weights
    total = w.recon * recon + w.linear * linear + w.state * state + w.dist * dist
    losses = KaeLosses(total, recon, linear, state, dist)
    if not need_grad:
        return losses, None

    c = dtype.type(2.0 / n)
    d_dec = np.concatenate([c * w.recon * r_rec_i, c * w.recon * r_rec_j, c * w.state * r_state])
    dec_grads = nn.backward(dec_tape, d_dec.astype(dtype))
    d_enc = dec_grads.input[:2 * n].copy()
    d_adv = dec_grads.input[2 * n:] + c * w.linear * r_lin
    d_enc[n:] -= c * w.linear * r_lin
    d_enc[:n] += d_adv @ k
    d_k = d_adv.T @ enc_i
    four = dtype.type(4.0 / n * w.dist)
    d_enc[:n] -= four * e_i[:, None] * enc_i
    d_enc[n:] -= four * e_j[:, None] * enc_j
    enc_grads = nn.backward(enc_tape, d_enc)
    d_g = linalg.matrix_exp_grad(g64, d_k.astype(np.float64)).astype(dtype)
    grads = enc_grads.flat() + dec_grads.flat() + [d_g]
    return losses, grads


def compute_losses(model: KaeModel, x_hat_i, x_hat_j, weights: KaeLossWeights) -> KaeLosses:
    return _losses_and_grads(model, x_hat_i, x_hat_j, weights, need_grad=False)[0]


def loss_gradients(model: KaeModel, x_hat_i, x_hat_j, weights: KaeLossWeights):
    """``(losses, grads)`` with grads aligned to ``model.params``."""
    return _losses_and_grads(model, x_hat_i, x_hat_j, weights, need_grad=True)


def train_kae(model: KaeModel, x_hat_i, x_hat_j, cfg: KaeTrainConfig,
              heldout: tuple[np.ndarray, np.ndarray] | None = None
              ) -> tuple[KaeModel, list[dict]]:
    """AdamW over shuffled minibatches. Returns a trained copy and per-epoch losses."""
    if model.edited:
        raise UsageError("cannot train a model whose operator was edited")
    model = model.copy()
    x_i = np.asarray(x_hat_i, dtype=model.dtype)
    x_j = np.asarray(x_hat_j, dtype=model.dtype)
    n = x_i.shape[0]
    rng = np.random.default_rng(cfg.seed)
    opt = nn.AdamW(weight_decay=cfg.weight_decay)
    params = model.params
    history: list[dict] = []
    total_steps = cfg.epochs * -(-n // cfg.batch_size)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(5)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            losses, grads = loss_gradients(model, x_i[idx], x_j[idx], cfg.weights)
            if not np.isfinite(losses.total):
                raise TrainingError(f"non-finite KAE loss in epoch {epoch}", epoch=epoch)
            opt.step(params, grads, cfg.lr_at(step, total_steps))
            step += 1
            sums += len(idx) * np.array([losses.total, losses.recon, losses.linear,
                                         losses.state, losses.dist])
        row = dict(zip(("total", *LOSS_NAMES), (sums / n).tolist()))
        row["epoch"] = epoch
        if heldout is not None:
            row["heldout_state"] = compute_losses(model, *heldout, cfg.weights).state
        history.append(row)
        if epoch % max(1, cfg.epochs // 10) == 0 or epoch == cfg.epochs - 1:
            log.info("kae epoch %d total %.3e", epoch, row["total"])
    return model, history


def surrogate_predictions(model: KaeModel, t_i: PreprocessTransform, t_j: PreprocessTransform,
                          mlp: ResidualMlp, features: np.ndarray) -> np.ndarray:
    """L0 -> T_i -> KAE -> T_j^-1 -> head -> argmax."""
    l0 = mlp.representations(features)[0]
    x_hat_j = predict(model, apply(t_i, l0))
    return np.argmax(mlp.head_logits(invert(t_j, x_hat_j)), axis=1)


def surrogate_accuracy(model: KaeModel, t_i: PreprocessTransform, t_j: PreprocessTransform,
                       mlp: ResidualMlp, data) -> Accuracy:
    preds = []
    for start in range(0, data.n, 4096):
        preds.append(surrogate_predictions(model, t_i, t_j, mlp, data.features[start:start + 4096]))
    return accuracy_from_predictions(np.concatenate(preds), data.labels, mlp.num_classes)


def with_weights(cfg: KaeTrainConfig, **kw) -> KaeTrainConfig:
    return replace(cfg, weights=replace(cfg.weights, **kw))
