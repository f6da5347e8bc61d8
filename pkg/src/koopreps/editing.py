"""Class unlearning by editing the Koopman operator.

Observables are stored as rows; the solver works with keys as columns.
With ``C = X_keep X_keep^T + ridge*I`` the update is

    delta = (Z_new - K X_mem) (X_mem^T C^-1 X_mem + ridge*I)^-1 X_mem^T C^-1

which maps the edit keys onto their new values while penalising movement
of the preserved keys. The edited operator replaces ``K`` as an explicit
matrix; the generator is left untouched.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import linalg
from .errors import ArgumentError, NumericalError
from .kae import KaeModel, surrogate_accuracy, koopman_operator
from .preprocess import PreprocessTransform
from .resnet import Accuracy, ResidualMlp

TARGET_RULES = ("centroid", "nearest")


@dataclass(frozen=True)
class EditPlan:
    forget_class: int
    merge_into: int
    subsample_edits: int = 512
    ridge: float = 1e-3
    target_rule: str = "centroid"
    seed: int = 0

    def __post_init__(self):
        if self.forget_class == self.merge_into:
            raise ArgumentError("forget_class and merge_into must differ")
        if self.subsample_edits < 1:
            raise ArgumentError("subsample_edits must be >= 1")
        if self.ridge < 0:
            raise ArgumentError("ridge must be >= 0")
        if self.target_rule not in TARGET_RULES:
            raise ArgumentError(f"target_rule must be one of {TARGET_RULES}")


@dataclass
class EditResult:
    plan: EditPlan
    edited_operator: np.ndarray
    before: Accuracy
    after: Accuracy
    edit_residual: float
    keep_displacement: float
    mem_displacement: float
    n_edit_keys: int

    def to_dict(self) -> dict:
        return {
            "plan": asdict(self.plan),
            "n_edit_keys": self.n_edit_keys,
            "edit_residual": self.edit_residual,
            "preservation_drift": self.keep_displacement,
            "edit_displacement": self.mem_displacement,
            "before": self.before.to_dict(),
            "after": self.after.to_dict(),
        }


def collect_observables(kae: KaeModel, x_hat_j, labels, c: int):
    """Encode the target-side representations and split them by class ``c``."""
    labels = np.asarray(labels)
    mask = labels == c
    if not mask.any():
        raise ArgumentError(f"class {c} is absent from the labels")
    z = np.asarray(kae.encode(x_hat_j), dtype=np.float64)
    return z[mask], z[~mask]


def invert_inputs(kae: KaeModel, z_del) -> np.ndarray:
    """Pull outputs back through ``K^-1 = exp(-G)``."""
    inv = linalg.matrix_exp(-np.asarray(kae.generator, dtype=np.float64))
    return np.asarray(z_del, dtype=np.float64) @ inv.T


def select_alt_outputs(z_keep, keep_labels, merge_into: int, n_targets: int,
                       rule: str = "centroid", z_del=None) -> np.ndarray:
    z_keep = np.asarray(z_keep, dtype=np.float64)
    keep_labels = np.asarray(keep_labels)
    members = z_keep[keep_labels == merge_into]
    if len(members) == 0:
        raise ArgumentError(f"merge class {merge_into} is absent")
    if rule == "centroid":
        return np.repeat(members.mean(axis=0, keepdims=True), n_targets, axis=0)
    if rule == "nearest":
        if z_del is None or len(z_del) != n_targets:
            raise ArgumentError("nearest targets need the deleted observables")
        d2 = (np.sum(z_del**2, axis=1)[:, None] - 2 * z_del @ members.T
              + np.sum(members**2, axis=1)[None, :])
        return members[np.argmin(d2, axis=1)]
    raise ArgumentError(f"unknown target rule {rule!r}")


def solve_edit(k, x_mem, z_new, x_keep, plan: EditPlan) -> np.ndarray:
    """Closed-form edit. All key/value matrices hold one observable per row."""
    k = np.asarray(k, dtype=np.float64)
    x_mem = np.asarray(x_mem, dtype=np.float64)
    z_new = np.asarray(z_new, dtype=np.float64)
    x_keep = np.asarray(x_keep, dtype=np.float64)
    if x_keep.shape[0] == 0:
        raise ArgumentError("need at least one preserved key")
    if x_mem.shape != z_new.shape:
        raise ArgumentError(f"edit keys {x_mem.shape} and values {z_new.shape} differ")
    if x_mem.shape[1] != k.shape[0] or x_keep.shape[1] != k.shape[0]:
        raise ArgumentError("key dimension does not match the operator")
    cov = x_keep.T @ x_keep
    try:
        a = linalg.solve_spd(cov, x_mem.T, plan.ridge)          # C^-1 X_mem
        s = x_mem @ a                                           # X_mem^T C^-1 X_mem
        s = 0.5 * (s + s.T)
        resid = z_new - x_mem @ k.T                             # rows of (Z_new - K X_mem)^T
        b = linalg.solve_spd(s, resid, plan.ridge)              # (S + rI)^-1 R^T
    except NumericalError as exc:
        raise NumericalError(
            f"edit system is ill-conditioned ({exc}); raise the ridge or lower subsample_edits"
        ) from exc
    delta = (a @ b).T
    out = k + delta
    if not np.all(np.isfinite(out)):
        raise NumericalError("edited operator is not finite; raise the ridge")
    return out


def nearest_other_class(z, labels, c: int) -> int:
    """Class whose observable centroid is closest to class ``c``'s centroid."""
    labels = np.asarray(labels)
    classes = [k for k in np.unique(labels).tolist() if k != c]
    centroid = z[labels == c].mean(axis=0)
    dists = [np.linalg.norm(z[labels == k].mean(axis=0) - centroid) for k in classes]
    return int(classes[int(np.argmin(dists))])


def run_edit(kae: KaeModel, mlp: ResidualMlp, t_i: PreprocessTransform,
             t_j: PreprocessTransform, x_hat_i, x_hat_j, labels, eval_data,
             plan: EditPlan) -> EditResult:
    """Build edit keys from the (training) pair, solve, and re-evaluate on ``eval_data``."""
    labels = np.asarray(labels)
    c = plan.forget_class
    z_del, z_keep = collect_observables(kae, x_hat_j, labels, c)
    keep_labels = labels[labels != c]
    x_keep = np.asarray(kae.encode(np.asarray(x_hat_i)[labels != c]), dtype=np.float64)
    x_mem_all = invert_inputs(kae, z_del)

    rng = np.random.default_rng(plan.seed)
    m = min(plan.subsample_edits, len(x_mem_all))
    pick = np.sort(rng.choice(len(x_mem_all), size=m, replace=False))
    x_mem = x_mem_all[pick]
    z_new = select_alt_outputs(z_keep, keep_labels, plan.merge_into, m,
                               plan.target_rule, z_del[pick])

    k = koopman_operator(kae)
    k_new = solve_edit(k, x_mem, z_new, x_keep, plan)
    delta = k_new - k
    residual = float(np.linalg.norm(x_mem @ k_new.T - z_new) / max(np.linalg.norm(z_new), 1e-300))
    keep_disp = float(np.linalg.norm(x_keep @ delta.T, axis=1).mean())
    mem_disp = float(np.linalg.norm(x_mem @ delta.T, axis=1).mean())

    before = surrogate_accuracy(kae, t_i, t_j, mlp, eval_data)
    after = surrogate_accuracy(kae.with_operator(k_new), t_i, t_j, mlp, eval_data)
    return EditResult(plan, k_new, before, after, residual, keep_disp, mem_disp, m)
