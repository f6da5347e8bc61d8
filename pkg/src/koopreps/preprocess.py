"""Centre, project, scale and rotate representation pairs.

The fitted transform is ``x_hat = ((x - mean) @ projection) / scale @ rotation``.
Scaling is one global factor, so inter-point distances keep their ratios:

* ``"rms"`` (default): ``scale = ||x||_F / sqrt(n)``, giving unit mean squared
  row norm. Keeps per-sample magnitudes O(1) whatever the sample count.
* ``"frobenius"``: ``scale = ||x||_F``, giving a unit-norm matrix.

Projection uses the top-q right singular vectors of the centred data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NotInvertibleError
from .linalg import procrustes_rotation, svd


@dataclass(frozen=True)
class PreprocessTransform:
    mean: np.ndarray
    projection: np.ndarray
    scale: float
    rotation: np.ndarray
    fitted_on: int = -1

    def __post_init__(self):
        for name in ("mean", "projection", "rotation"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.scale <= 0:
            raise ArgumentError("scale must be positive")

    @property
    def d(self) -> int:
        return self.projection.shape[0]

    @property
    def q(self) -> int:
        return self.projection.shape[1]

    @property
    def invertible(self) -> bool:
        return self.q == self.d


def _features(x) -> np.ndarray:
    return np.asarray(getattr(x, "features", x), dtype=np.float64)


def center(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x - x.mean(axis=0)


NORMALIZATIONS = ("rms", "frobenius")


def _fit_single(x: np.ndarray, q: int, layer: int,
                normalize: str) -> tuple[PreprocessTransform, np.ndarray]:
    mean = x.mean(axis=0)
    xc = x - mean
    projection = svd(xc).vt[:q].T
    xp = xc @ projection
    scale = float(np.linalg.norm(xp))
    if normalize == "rms":
        scale /= np.sqrt(x.shape[0])
    if scale == 0:
        raise ArgumentError("representation has zero variance")
    t = PreprocessTransform(mean, projection, scale, np.eye(q), layer)
    return t, xp / scale


def fit_pair(x_i, x_j, q: int | None = None, normalize: str = "rms"):
    """Fit transforms for a row-aligned pair; the i-side is rotated onto the j-side.

    Returns ``(T_i, T_j, x_hat_i, x_hat_j)``.
    """
    a, b = _features(x_i), _features(x_j)
    if a.shape[0] != b.shape[0]:
        raise ArgumentError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if normalize not in NORMALIZATIONS:
        raise ArgumentError(f"normalize must be one of {NORMALIZATIONS}, got {normalize!r}")
    if q is None:
        q = min(a.shape[1], b.shape[1])
    limit = min(n - 1, a.shape[1], b.shape[1])
    if not 1 <= q <= limit:
        raise ArgumentError(f"q={q} outside [1, {limit}] for shapes {a.shape}, {b.shape}")
    t_i, xi = _fit_single(a, q, getattr(x_i, "layer", -1), normalize)
    t_j, xj = _fit_single(b, q, getattr(x_j, "layer", -1), normalize)
    rot = procrustes_rotation(xj, xi)
    t_i = PreprocessTransform(t_i.mean, t_i.projection, t_i.scale, rot, t_i.fitted_on)
    return t_i, t_j, xi @ rot, xj


def apply(t: PreprocessTransform, x) -> np.ndarray:
    x = _features(x)
    if x.ndim != 2 or x.shape[1] != t.d:
        raise ArgumentError(f"expected {t.d} columns, got shape {x.shape}")
    return ((x - t.mean) @ t.projection) / t.scale @ t.rotation


def invert(t: PreprocessTransform, x_hat) -> np.ndarray:
    if not t.invertible:
        raise NotInvertibleError(f"projection keeps {t.q} of {t.d} dimensions; cannot invert")
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_hat.ndim != 2 or x_hat.shape[1] != t.q:
        raise ArgumentError(f"expected {t.q} columns, got shape {x_hat.shape}")
    return (x_hat @ t.rotation.T) * t.scale @ t.projection.T + t.mean
