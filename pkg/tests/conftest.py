from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_orthogonal(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def write_idx_images(path, images: np.ndarray, magic: int = 0x00000803) -> None:
    n, rows, cols = images.shape
    header = np.array([magic, n, rows, cols], dtype=">u4").tobytes()
    path.write_bytes(header + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray, magic: int = 0x00000801) -> None:
    header = np.array([magic, len(labels)], dtype=">u4").tobytes()
    path.write_bytes(header + labels.astype(np.uint8).tobytes())


def write_fake_mnist(directory, n_train: int = 30, n_test: int = 12, seed: int = 0) -> None:
    """Tiny well-formed IDX quartet with 28x28 images."""
    g = np.random.default_rng(seed)
    for prefix, n in (("train", n_train), ("t10k", n_test)):
        write_idx_images(directory / f"{prefix}-images-idx3-ubyte",
                         g.integers(0, 256, size=(n, 28, 28)))
        write_idx_labels(directory / f"{prefix}-labels-idx1-ubyte", g.integers(0, 10, size=n))


CRITERIA: dict[str, str] = {}


def record_criterion(key: str, status: str, detail: str) -> str:
    """Remember one acceptance verdict; shown again in the terminal summary."""
    line = f"criterion {key}: {status} - {detail}"
    CRITERIA[key] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(k.split("-")[0]), k)):
        terminalreporter.write_line(CRITERIA[key])
