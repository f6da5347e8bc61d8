from __future__ import annotations

import gzip

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from koopreps.datasets import (Dataset, YinYangSpec, gen_yinyang, load_mnist, read_idx_images,
                               read_idx_labels, yinyang_class)
from koopreps.errors import ArgumentError, BadMagicError, CountMismatchError, TruncatedFileError

from conftest import write_fake_mnist, write_idx_images, write_idx_labels


def test_dot_centres_are_class_two():
    spec = YinYangSpec()
    cls = yinyang_class(np.array([0.5, 0.5]), np.array([0.75, 0.25]), spec)
    assert cls.tolist() == [2, 2]


def test_yin_and_yang_halves():
    spec = YinYangSpec()
    # left and right of centre, away from the dots and the S-curve
    assert yinyang_class(np.array([0.1]), np.array([0.5]), spec).tolist() == [0]
    assert yinyang_class(np.array([0.9]), np.array([0.5]), spec).tolist() == [1]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_counts_balanced_and_inside_circle(seed):
    ds = gen_yinyang(YinYangSpec(n=5000, seed=seed))
    counts = np.bincount(ds.labels, minlength=3)
    assert np.all((counts >= 1500) & (counts <= 1833)), counts
    r = np.linalg.norm(ds.features - 0.5, axis=1)
    assert np.all(r < 0.5)
    assert ds.features.shape == (5000, 2)


def test_generation_reproducible_and_labels_consistent():
    spec = YinYangSpec(n=800, seed=5)
    a, b = gen_yinyang(spec), gen_yinyang(spec)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    again = yinyang_class(a.features[:, 0], a.features[:, 1], spec)
    assert np.array_equal(again, a.labels)
    other = gen_yinyang(YinYangSpec(n=800, seed=6))
    assert not np.array_equal(a.features, other.features)


@settings(max_examples=15, deadline=None)
@given(st.integers(100, 400), st.integers(0, 10_000))
def test_all_classes_present(n, seed):
    ds = gen_yinyang(YinYangSpec(n=n, seed=seed))
    assert set(np.unique(ds.labels)) == {0, 1, 2}


def test_dataset_rejects_bad_labels():
    with pytest.raises(ArgumentError):
        Dataset(np.zeros((2, 2)), np.array([0, -1]), "x")
    with pytest.raises(ArgumentError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), "x")


def test_load_mnist_scales_and_counts(tmp_path):
    write_fake_mnist(tmp_path, 30, 12)
    train, test = load_mnist(tmp_path)
    assert train.features.shape == (30, 784) and test.n == 12
    assert train.features.min() >= 0.0 and train.features.max() <= 1.0
    raw = read_idx_images(tmp_path / "train-images-idx3-ubyte")
    assert np.array_equal(train.features, raw.astype(np.float32) / 255.0)


def test_load_mnist_gzip(tmp_path):
    write_fake_mnist(tmp_path, 5, 5)
    for p in list(tmp_path.iterdir()):
        p.with_name(p.name + ".gz").write_bytes(gzip.compress(p.read_bytes()))
        p.unlink()
    train, _ = load_mnist(tmp_path)
    assert train.n == 5


def test_bad_magic_names_file(tmp_path):
    path = tmp_path / "imgs"
    write_idx_images(path, np.zeros((2, 28, 28)), magic=0x00000801)
    with pytest.raises(BadMagicError, match="imgs"):
        read_idx_images(path)
    lbl = tmp_path / "lbls"
    write_idx_labels(lbl, np.zeros(2), magic=0x00000803)
    with pytest.raises(BadMagicError, match="lbls"):
        read_idx_labels(lbl)


def test_truncated(tmp_path):
    path = tmp_path / "imgs"
    write_idx_images(path, np.zeros((3, 28, 28)))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(TruncatedFileError):
        read_idx_images(path)
    path.write_bytes(b"\x00\x00")
    with pytest.raises(TruncatedFileError):
        read_idx_images(path)


def test_count_mismatch(tmp_path):
    write_fake_mnist(tmp_path, 10, 4)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", np.zeros(9))
    with pytest.raises(CountMismatchError):
        load_mnist(tmp_path)
