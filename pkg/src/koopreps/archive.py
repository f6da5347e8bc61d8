"""KTA1 tensor archives and (de)serialisation of every artifact type.

Layout (little-endian)::

    b"KTA1" | u32 entry count | entries...
    entry = u16 name length | utf-8 name | u8 dtype | u8 rank | u64 dims[rank] | payload

dtype codes: 0 = f32, 1 = f64, 2 = i64. JSON metadata rides along as an i64
entry named ``__meta__`` holding the UTF-8 bytes.
"""
from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

from . import nn
from .datasets import Dataset
from .errors import ArgumentError, BadMagicError, ParseError, TruncatedFileError
from .kae import KaeModel, check_operator
from .preprocess import PreprocessTransform
from .resnet import RepresentationSet, ResidualMlp

MAGIC = b"KTA1"
META_KEY = "__meta__"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


def _encode(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind in "iub" and arr.dtype != np.int64:
        arr = arr.astype(np.int64)
    code = CODES.get(np.dtype(arr.dtype.newbyteorder("=")))
    if code is None:
        raise ArgumentError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def write_archive(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    items = dict(tensors)
    if META_KEY in items:
        raise ArgumentError(f"{META_KEY} is reserved")
    if meta is not None:
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        items[META_KEY] = np.frombuffer(blob, dtype=np.uint8).astype(np.int64)
    chunks = [MAGIC, struct.pack("<I", len(items))]
    chunks += [_encode(name, arr) for name, arr in items.items()]
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"{self.path}: archive truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def read_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a KTA1 archive (magic {data[:4]!r})")
    r = _Reader(data, path)
    r.take(4)
    (count,) = struct.unpack("<I", r.take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", r.take(2))
        name = r.take(nlen).decode("utf-8")
        code, rank = struct.unpack("<BB", r.take(2))
        if code not in DTYPES:
            raise ParseError(f"{path}: entry {name!r} has unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        dt = DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(size), dtype=dt).reshape(dims)
        if name in tensors:
            raise ParseError(f"{path}: duplicate entry {name!r}")
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(data):
        raise ParseError(f"{path}: {len(data) - r.pos} trailing bytes")
    meta = {}
    if META_KEY in tensors:
        meta = json.loads(tensors.pop(META_KEY).astype(np.uint8).tobytes().decode("utf-8"))
    return tensors, meta


def _expect(meta: dict, kind: str, path) -> None:
    if meta.get("kind") != kind:
        raise ParseError(f"{path}: expected a {kind!r} archive, found {meta.get('kind')!r}")


# datasets -----------------------------------------------------------------

def save_dataset(path, ds: Dataset) -> Path:
    return write_archive(path, {"features": ds.features, "labels": ds.labels},
                         {"kind": "dataset", "name": ds.name, "seed": ds.seed})


def load_dataset(path) -> Dataset:
    t, meta = read_archive(path)
    if meta.get("kind") == "reps":
        return Dataset(t["features"], t["labels"], meta.get("dataset", "reps"))
    _expect(meta, "dataset", path)
    return Dataset(t["features"], t["labels"], meta["name"], meta.get("seed"))


# residual MLP -------------------------------------------------------------

def _dense_tensors(prefix: str, layer: nn.Dense) -> dict[str, np.ndarray]:
    return {f"{prefix}.weight": layer.weight, f"{prefix}.bias": layer.bias}


def _dense(t: dict, prefix: str, activation: str, slope: float = nn.DEFAULT_LEAKY_SLOPE) -> nn.Dense:
    return nn.Dense(t[f"{prefix}.weight"].copy(), t[f"{prefix}.bias"].copy(), activation, slope)


def save_mlp(path, model: ResidualMlp, extra: dict | None = None) -> Path:
    tensors = _dense_tensors("input", model.input_layer)
    for i, b in enumerate(model.blocks):
        tensors.update(_dense_tensors(f"block{i}", b.inner))
    tensors.update(_dense_tensors("head", model.head))
    arch = {"d_in": model.d_in, "width": model.width, "n_blocks": len(model.blocks),
            "n_classes": model.num_classes}
    return write_archive(path, tensors, {"kind": "mlp", "arch": arch, **(extra or {})})


def load_mlp(path) -> tuple[ResidualMlp, dict]:
    t, meta = read_archive(path)
    _expect(meta, "mlp", path)
    blocks = [nn.Residual(_dense(t, f"block{i}", "relu")) for i in range(meta["arch"]["n_blocks"])]
    return ResidualMlp(_dense(t, "input", "relu"), blocks, _dense(t, "head", "identity")), meta


# representations ------------------------------------------------------------

def save_reps(path, reps: RepresentationSet, dataset: str) -> Path:
    return write_archive(path, {"features": reps.features, "labels": reps.labels},
                         {"kind": "reps", "layer": reps.layer, "dataset": dataset})


def load_reps(path) -> tuple[RepresentationSet, dict]:
    t, meta = read_archive(path)
    if meta.get("kind") == "dataset":
        return RepresentationSet(t["features"], t["labels"], -1), {"dataset": meta["name"]}
    if meta.get("kind") not in ("reps", "decoded"):
        raise ParseError(f"{path}: expected representations, found {meta.get('kind')!r}")
    return RepresentationSet(t["features"], t["labels"], meta.get("layer", -1)), meta


# preprocessing ---------------------------------------------------------------

def _transform_tensors(prefix: str, t: PreprocessTransform) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.mean": t.mean,
        f"{prefix}.projection": t.projection,
        f"{prefix}.rotation": t.rotation,
        f"{prefix}.scale": np.array([t.scale]),
        f"{prefix}.fitted_on": np.array([t.fitted_on], dtype=np.int64),
    }


def _transform(t: dict, prefix: str) -> PreprocessTransform:
    return PreprocessTransform(t[f"{prefix}.mean"], t[f"{prefix}.projection"],
                               float(t[f"{prefix}.scale"][0]), t[f"{prefix}.rotation"],
                               int(t[f"{prefix}.fitted_on"][0]))


def save_pair(path, t_i, t_j, x_hat_i, x_hat_j, labels, meta: dict) -> Path:
    tensors = {"x_hat_i": x_hat_i, "x_hat_j": x_hat_j, "labels": labels}
    tensors.update(_transform_tensors("t_i", t_i))
    tensors.update(_transform_tensors("t_j", t_j))
    return write_archive(path, tensors, {"kind": "pair", **meta})


def load_pair(path):
    t, meta = read_archive(path)
    _expect(meta, "pair", path)
    return (_transform(t, "t_i"), _transform(t, "t_j"), t["x_hat_i"], t["x_hat_j"],
            t["labels"], meta)


# KAE checkpoint ----------------------------------------------------------------

def save_kae(path, model: KaeModel, t_i: PreprocessTransform, t_j: PreprocessTransform,
             meta: dict) -> Path:
    tensors = {}
    for i, layer in enumerate(model.encoder):
        tensors.update(_dense_tensors(f"encoder{i}", layer))
    for i, layer in enumerate(model.decoder):
        tensors.update(_dense_tensors(f"decoder{i}", layer))
    tensors["generator"] = model.generator
    if model.operator_override is not None:
        tensors["operator_override"] = model.operator_override
    tensors.update(_transform_tensors("t_i", t_i))
    tensors.update(_transform_tensors("t_j", t_j))
    full = {"kind": "kae", "d": model.d, "hidden": model.encoder[0].n_out,
            "observable": model.observable_dim, "k_steps": model.k_steps,
            "leaky_slope": model.encoder[0].slope, **meta}
    return write_archive(path, tensors, full)


def load_kae(path) -> tuple[KaeModel, PreprocessTransform, PreprocessTransform, dict]:
    t, meta = read_archive(path)
    _expect(meta, "kae", path)
    slope = meta.get("leaky_slope", nn.DEFAULT_LEAKY_SLOPE)
    enc = [_dense(t, "encoder0", "leaky_relu", slope), _dense(t, "encoder1", "identity")]
    dec = [_dense(t, "decoder0", "leaky_relu", slope), _dense(t, "decoder1", "identity")]
    override = t.get("operator_override")
    model = KaeModel(enc, dec, t["generator"].copy(), int(meta["k_steps"]),
                     None if override is None else override.copy())
    check_operator(model)
    return model, _transform(t, "t_i"), _transform(t, "t_j"), meta


# CSV outputs ---------------------------------------------------------------------

def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "inf" if np.isinf(v) else repr(float(v))
    return str(v)


def write_diagram_csv(path, pairs) -> Path:
    return write_csv(path, ["dim", "birth", "death"], ((p.dim, p.birth, p.death) for p in pairs))


def write_betti_csv(path, curves) -> Path:
    rows = ((c.dim, float(e), int(n)) for c in curves for e, n in zip(c.epsilons, c.counts))
    return write_csv(path, ["dim", "epsilon", "count"], rows)


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
