"""Dense linear algebra used by preprocessing, the KAE and the editor.

All functions are pure and operate on float64 copies unless noted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ArgumentError, NumericalError

# Taylor order used inside the squaring loop; with the scaled norm kept
# below _EXP_THETA the truncation error is under 1e-16 relative.
_EXP_ORDER = 12
_EXP_THETA = 0.5


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def _as_matrix(a, name: str = "a") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ArgumentError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def svd(a) -> SvdResult:
    """Thin SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its largest-magnitude entry
    is positive (the right vector flips with it), which makes repeated fits
    reproducible regardless of LAPACK's sign choices.
    """
    a = _as_matrix(a)
    if a.size == 0:
        raise ArgumentError("svd of an empty matrix")
    if not np.all(np.isfinite(a)):
        raise ArgumentError(f"svd input of shape {a.shape} has non-finite entries")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge for matrix of shape {a.shape}") from exc
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return SvdResult(u=u * signs, s=s, vt=vt * signs[:, None])


def procrustes_rotation(x, y) -> np.ndarray:
    """Orthogonal ``R`` minimising ``||x - y @ R||_F``.

    The second operand is the one being moved: ``y @ R`` approximates ``x``.
    """
    x = _as_matrix(x, "x")
    y = _as_matrix(y, "y")
    if x.shape != y.shape:
        raise ArgumentError(f"procrustes shapes differ: {x.shape} vs {y.shape}")
    res = svd(y.T @ x)
    return res.u @ res.vt


def _check_square(g, name: str = "g") -> np.ndarray:
    g = _as_matrix(g, name)
    if g.shape[0] != g.shape[1]:
        raise ArgumentError(f"{name} must be square, got shape {g.shape}")
    return g


def _exp_squarings(g: np.ndarray) -> int:
    norm = np.linalg.norm(g, 1)
    if norm <= _EXP_THETA:
        return 0
    return int(math.ceil(math.log2(norm / _EXP_THETA)))


def matrix_exp(g) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a Taylor core.

    ``g`` is scaled by ``2**-s`` until its 1-norm is at most 0.5, the
    order-12 Taylor polynomial is evaluated with Horner's rule, and the
    result is squared ``s`` times. Only adds and multiplies are involved.
    """
    g = _check_square(g)
    n = g.shape[0]
    s = _exp_squarings(g)
    a = g / (2.0**s)
    eye = np.eye(n)
    p = eye.copy()
    for j in range(_EXP_ORDER, 0, -1):
        p = eye + (a @ p) / j
    for _ in range(s):
        p = p @ p
    return p


def matrix_exp_frechet(g, direction) -> np.ndarray:
    """Frechet derivative of ``exp`` at ``g`` applied to ``direction``.

    Uses the block identity ``exp([[g, e], [0, g]]) = [[exp(g), L(g, e)], [0, exp(g)]]``.
    """
    g = _check_square(g)
    e = _as_matrix(direction, "direction")
    if e.shape != g.shape:
        raise ArgumentError(f"direction shape {e.shape} does not match {g.shape}")
    n = g.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = g
    block[n:, n:] = g
    block[:n, n:] = e
    return matrix_exp(block)[:n, n:]


def matrix_exp_grad(g, upstream) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. ``g`` given ``dL/d exp(g)``."""
    g = _check_square(g)
    return matrix_exp_frechet(g.T, upstream)


def matrix_power(a, k: int) -> np.ndarray:
    a = _check_square(a, "a")
    if k < 0:
        raise ArgumentError(f"matrix power must be non-negative, got {k}")
    return np.linalg.matrix_power(a, k)


def solve_spd(a, b, ridge: float = 0.0) -> np.ndarray:
    """Solve ``(a + ridge*I) x = b`` by Cholesky factorisation."""
    a = _check_square(a, "a")
    b = np.asarray(b, dtype=np.float64)
    if ridge < 0:
        raise ArgumentError(f"ridge must be >= 0, got {ridge}")
    if b.shape[0] != a.shape[0]:
        raise ArgumentError(f"rhs has {b.shape[0]} rows, system has {a.shape[0]}")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ArgumentError("solve_spd needs a symmetric matrix")
    reg = a + ridge * np.eye(a.shape[0])
    try:
        factor = scipy.linalg.cho_factor(reg, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(
            f"Cholesky failed for {a.shape} system with ridge={ridge:g}; try a larger ridge"
        ) from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)
