"""Yin-Yang generation and MNIST IDX ingestion."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, BadMagicError, CountMismatchError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str
    seed: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ArgumentError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if self.features.shape[0] == 0:
            raise ArgumentError("dataset is empty")
        if self.labels.min() < 0:
            raise ArgumentError("labels must be non-negative class indices")
        if not np.all(np.isfinite(self.features)):
            raise ArgumentError("features contain NaN or Inf")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class YinYangSpec:
    n: int = 5000
    seed: int = 0
    big_radius: float = 0.5
    dot_radius: float = 0.1
    center: tuple[float, float] = (0.5, 0.5)


def yinyang_class(x, y, spec: YinYangSpec) -> np.ndarray:
    """Class of each point: 0 yin, 1 yang, 2 dots. Points are assumed in the disc.

    The S-curve is made of two half-circles of radius ``big_radius/2`` centred
    on the dots at ``(cx, cy +/- big_radius/2)``. Yin is the left half plus the
    upper small disc, minus the lower small disc.
    """
    cx, cy = spec.center
    half = spec.big_radius / 2.0
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d_top = np.hypot(x - cx, y - (cy + half))
    d_bottom = np.hypot(x - cx, y - (cy - half))
    yin = (d_top <= half) | ((x < cx) & (d_bottom > half))
    cls = np.where(yin, 0, 1)
    dots = (d_top <= spec.dot_radius) | (d_bottom <= spec.dot_radius)
    return np.where(dots, 2, cls)


def gen_yinyang(spec: YinYangSpec) -> Dataset:
    """Class-balanced rejection sampling inside the big circle.

    A target class is drawn uniformly for every sample, then uniform points in
    the disc are drawn until one of that class turns up. Uniform sampling alone
    would give the dots only ~8% of the mass.
    """
    if spec.n <= 0:
        raise ArgumentError("n must be positive")
    rng = np.random.default_rng(spec.seed)
    targets = rng.integers(0, 3, size=spec.n)
    cx, cy = spec.center
    r = spec.big_radius
    points = np.empty((spec.n, 2))
    for c in range(3):
        need = int(np.sum(targets == c))
        found: list[np.ndarray] = []
        have = 0
        while have < need:
            cand = rng.uniform(-r, r, size=(4 * need + 64, 2))
            inside = np.hypot(cand[:, 0], cand[:, 1]) < r
            cand = cand[inside] + (cx, cy)
            keep = cand[yinyang_class(cand[:, 0], cand[:, 1], spec) == c]
            found.append(keep)
            have += len(keep)
        points[targets == c] = np.concatenate(found)[:need]
    return Dataset(points, targets, name="yinyang", seed=spec.seed)


def _open(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _resolve(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / (stem + ".gz")):
        if candidate.exists():
            return candidate
    # MNIST mirrors sometimes ship "t10k-images.idx3-ubyte"
    alt = directory / stem.replace("-idx", ".idx")
    if alt.exists():
        return alt
    raise FileNotFoundError(f"missing MNIST file {stem} in {directory}")


def read_idx_images(path) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 16:
        raise TruncatedFileError(f"{path}: header shorter than 16 bytes")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagicError(f"{path}: image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    expected = count * rows * cols
    if len(data) - 16 < expected:
        raise TruncatedFileError(f"{path}: expected {expected} pixel bytes, found {len(data) - 16}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=16)
    return pixels.reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 8:
        raise TruncatedFileError(f"{path}: header shorter than 8 bytes")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise BadMagicError(f"{path}: label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(data) - 8 < count:
        raise TruncatedFileError(f"{path}: expected {count} labels, found {len(data) - 8}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    """Read the four standard IDX files; pixels are scaled to [0, 1] float32."""
    directory = Path(directory)
    out = []
    for split, (img_stem, lbl_stem) in MNIST_FILES.items():
        img_path = _resolve(directory, img_stem)
        lbl_path = _resolve(directory, lbl_stem)
        images = read_idx_images(img_path)
        labels = read_idx_labels(lbl_path)
        if images.shape[0] != labels.shape[0]:
            raise CountMismatchError(
                f"{split}: {images.shape[0]} images in {img_path.name} but "
                f"{labels.shape[0]} labels in {lbl_path.name}"
            )
        out.append(Dataset(images.astype(np.float32) / 255.0, labels, name=f"mnist-{split}"))
    return out[0], out[1]
