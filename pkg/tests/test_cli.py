from __future__ import annotations

import json
import math

import numpy as np
import pytest

from koopreps import archive
from koopreps.cli import main
from koopreps.datasets import Dataset

from conftest import write_fake_mnist


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["gen-data", "yinyang", "--out", "x.kta", "--bogus"])
    assert info.value.code == 2


def test_missing_input_file(tmp_path):
    assert main(["capture", "--model", str(tmp_path / "nope.kta"), "--data",
                 str(tmp_path / "nope.kta"), "--out", str(tmp_path / "o")]) == 2


def test_bad_magic_exit_code(tmp_path):
    bad = tmp_path / "bad.kta"
    bad.write_bytes(b"NOPE" + bytes(12))
    assert main(["topology", "--reps", str(bad), "--out", str(tmp_path / "t")]) == 3


def test_bad_config_exit_code(tmp_path):
    main(["gen-data", "yinyang", "--n", "100", "--out", str(tmp_path / "d.kta")])
    conf = tmp_path / "c.conf"
    conf.write_text("mlp.epohcs = 3\n")
    assert main(["train-mlp", "--data", str(tmp_path / "d.kta"), "--config", str(conf),
                 "--out", str(tmp_path / "m.kta")]) == 2


def test_non_invertible_transform_is_numerical_error(tmp_path):
    d = tmp_path
    assert main(["gen-data", "yinyang", "--n", "200", "--out", str(d / "d.kta")]) == 0
    assert main(["train-mlp", "--data", str(d / "d.kta"), "--epochs", "2", "--out", str(d / "m.kta")]) == 0
    assert main(["capture", "--model", str(d / "m.kta"), "--data", str(d / "d.kta"), "--out", str(d / "r")]) == 0
    assert main(["preprocess", "--reps-i", str(d / "r/layer_0.kta"), "--reps-j", str(d / "r/layer_4.kta"),
                 "--q", "3", "--out", str(d / "p.kta")]) == 0
    assert main(["train-kae", "--pair", str(d / "p.kta"), "--epochs", "1", "--out", str(d / "k.kta")]) == 0
    assert main(["eval-surrogate", "--kae", str(d / "k.kta"), "--mlp", str(d / "m.kta"),
                 "--data", str(d / "d.kta"), "--out", str(d / "s.json")]) == 4


def test_topology_unit_square(tmp_path):
    square = Dataset(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
                     np.zeros(4, dtype=np.int64), "square")
    archive.save_dataset(tmp_path / "sq.kta", square)
    out = tmp_path / "topo"
    assert main(["topology", "--reps", str(tmp_path / "sq.kta"), "--max-dim", "1", "--eps-max", "2",
                 "--grid", "5", "--subsample", "0", "--out", str(out)]) == 0
    rows = archive.read_csv(out / "diagram.csv")
    loops = [r for r in rows if r["dim"] == "1"]
    assert len(loops) == 1
    assert float(loops[0]["birth"]) == 1.0 and float(loops[0]["death"]) == math.sqrt(2.0)
    dim0 = sorted(float(r["death"]) for r in rows if r["dim"] == "0")
    assert dim0 == [1.0, 1.0, 1.0, math.inf]
    betti = archive.read_csv(out / "betti.csv")
    b1 = [int(r["count"]) for r in betti if r["dim"] == "1"]
    assert b1 == [0, 0, 1, 0, 0]  # grid 0, .5, 1, 1.5, 2
    manifests = list(out.glob("*manifest*.json"))
    assert len(manifests) == 1
    man = json.loads(manifests[0].read_text())
    assert set(man) >= {"config", "seeds", "inputs", "outputs", "wall_clock_s"}
    assert man["config"]["topology.grid"] == 5


def test_load_mnist_command(tmp_path):
    write_fake_mnist(tmp_path, 20, 8)
    assert main(["load-mnist", "--dir", str(tmp_path), "--out", str(tmp_path / "arch")]) == 0
    train = archive.load_dataset(tmp_path / "arch" / "train.kta")
    assert train.n == 20 and train.name == "mnist-train"


def test_gen_data_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "yinyang", "--n", "300", "--seed", "4",
                     "--out", str(tmp_path / f"{name}.kta")]) == 0
    assert (tmp_path / "a.kta").read_bytes() == (tmp_path / "b.kta").read_bytes()
