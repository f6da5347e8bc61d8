"""A small reverse-mode engine for dense networks.

Layers operate on row-major batches: ``y = act(x @ W.T + b)`` with ``W`` of
shape ``(out, in)``. ``forward`` returns a single-use tape; ``backward``
consumes it and returns per-layer gradients plus the input gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, UsageError

ACTIVATIONS = ("relu", "leaky_relu", "identity")
DEFAULT_LEAKY_SLOPE = 0.01


@dataclass
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    slope: float = DEFAULT_LEAKY_SLOPE

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ArgumentError(
                f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent"
            )

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator,
             dtype=np.float32, slope: float = DEFAULT_LEAKY_SLOPE) -> "Dense":
        # Kaiming-uniform with a=sqrt(5): bound 1/sqrt(fan_in) for weight and bias.
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)
        b = rng.uniform(-bound, bound, size=(n_out,)).astype(dtype)
        return cls(w, b, activation, slope)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def copy(self) -> "Dense":
        return Dense(self.weight.copy(), self.bias.copy(), self.activation, self.slope)

    def astype(self, dtype) -> "Dense":
        return Dense(self.weight.astype(dtype), self.bias.astype(dtype), self.activation, self.slope)


@dataclass
class Residual:
    """``y = x + inner(x)`` where ``inner`` is a square dense layer."""

    inner: Dense

    def __post_init__(self):
        if self.inner.n_in != self.inner.n_out:
            raise ArgumentError("residual branch must preserve width")

    @property
    def n_in(self) -> int:
        return self.inner.n_in

    @property
    def n_out(self) -> int:
        return self.inner.n_out

    @property
    def params(self) -> list[np.ndarray]:
        return self.inner.params

    def copy(self) -> "Residual":
        return Residual(self.inner.copy())

    def astype(self, dtype) -> "Residual":
        return Residual(self.inner.astype(dtype))


def activate(z: np.ndarray, activation: str, slope: float = DEFAULT_LEAKY_SLOPE) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0)
    if activation == "leaky_relu":
        return np.where(z > 0, z, z * z.dtype.type(slope))
    return z


def activate_grad(z: np.ndarray, dy: np.ndarray, activation: str,
                  slope: float = DEFAULT_LEAKY_SLOPE) -> np.ndarray:
    if activation == "relu":
        return dy * (z > 0)
    if activation == "leaky_relu":
        return np.where(z > 0, dy, dy * dy.dtype.type(slope))
    return dy


def dense_forward(layer: Dense, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = x @ layer.weight.T + layer.bias
    return activate(z, layer.activation, layer.slope), z


def dense_backward(layer: Dense, x: np.ndarray, z: np.ndarray, dy: np.ndarray):
    dz = activate_grad(z, dy, layer.activation, layer.slope)
    return dz @ layer.weight, dz.T @ x, dz.sum(axis=0)


def _fingerprint(layer) -> tuple[float, float]:
    dense = layer.inner if isinstance(layer, Residual) else layer
    return float(dense.weight.sum(dtype=np.float64)), float(dense.bias.sum(dtype=np.float64))


@dataclass
class Tape:
    layers: list
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    outputs: list[np.ndarray]
    fingerprints: list[tuple[float, float]]
    consumed: bool = False


@dataclass
class Gradients:
    """Per-layer ``[dW, db]`` lists aligned with the forward layers."""

    layers: list[list[np.ndarray]]
    input: np.ndarray

    def flat(self) -> list[np.ndarray]:
        return [g for pair in self.layers for g in pair]


def forward(layers, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    inputs, preacts, outputs = [], [], []
    h = x
    for i, layer in enumerate(layers):
        if h.ndim != 2 or h.shape[1] != layer.n_in:
            raise ArgumentError(
                f"layer {i} expects {layer.n_in} input columns, got shape {h.shape}"
            )
        inputs.append(h)
        if isinstance(layer, Residual):
            branch, z = dense_forward(layer.inner, h)
            h = h + branch
        else:
            h, z = dense_forward(layer, h)
        preacts.append(z)
        outputs.append(h)
    tape = Tape(list(layers), inputs, preacts, outputs, [_fingerprint(l) for l in layers])
    return h, tape


def backward(tape: Tape, output_grad: np.ndarray) -> Gradients:
    if tape.consumed:
        raise UsageError("tape already consumed by a previous backward pass")
    if [_fingerprint(l) for l in tape.layers] != tape.fingerprints:
        raise UsageError("parameters changed since forward; tape is stale")
    tape.consumed = True
    grads: list[list[np.ndarray]] = [None] * len(tape.layers)  # type: ignore[list-item]
    dy = output_grad
    for i in range(len(tape.layers) - 1, -1, -1):
        layer = tape.layers[i]
        x, z = tape.inputs[i], tape.preacts[i]
        if isinstance(layer, Residual):
            dx, dw, db = dense_backward(layer.inner, x, z, dy)
            dx = dx + dy
        else:
            dx, dw, db = dense_backward(layer, x, z, dy)
        grads[i] = [dw, db]
        dy = dx
    return Gradients(grads, dy)


def parameters(layers) -> list[np.ndarray]:
    return [p for layer in layers for p in layer.params]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(-np.log(probs[rows, labels] + np.finfo(probs.dtype).tiny).mean())
    grad = probs
    grad[rows, labels] -= 1
    return loss, grad / n


@dataclass
class SgdMomentum:
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in params]
        _check_aligned(params, grads, self.velocity)
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += g
            if self.weight_decay:
                v += self.weight_decay * p
            p -= lr * v
        self.step_count += 1


@dataclass
class AdamW:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        _check_aligned(params, grads, self.m)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_aligned(params, grads, buffers) -> None:
    if len(params) != len(grads) or len(params) != len(buffers):
        raise ArgumentError("parameter, gradient and state lists differ in length")
    for p, g, b in zip(params, grads, buffers):
        if p.shape != g.shape or p.shape != b.shape:
            raise ArgumentError(f"shape mismatch: param {p.shape}, grad {g.shape}")


def optimizer_step(state, params: list[np.ndarray], grads: list[np.ndarray], lr: float):
    state.step(params, grads, lr)
    return params


@dataclass(frozen=True)
class CyclicLrSchedule:
    """One triangular cycle: base -> peak at the midpoint -> base."""

    peak_lr: float
    total_steps: int
    base_fraction: float = 1.0 / 25.0

    @property
    def base_lr(self) -> float:
        return self.peak_lr * self.base_fraction

    def __call__(self, step: int) -> float:
        if self.total_steps <= 0:
            return self.base_lr
        t = min(max(step, 0), self.total_steps) / self.total_steps
        frac = 1.0 - abs(2.0 * t - 1.0)
        return self.base_lr + (self.peak_lr - self.base_lr) * frac
