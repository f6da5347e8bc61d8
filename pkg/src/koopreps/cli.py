"""Command-line entry point: one subcommand per pipeline stage.

Every command writes a JSON run manifest next to its output. Exit codes:
2 usage/argument errors, 3 unreadable input files, 4 numerical failures.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, archive, linalg, topology
from .config import (Config, kae_train_config, load_config, mlp_train_config, override,
                     preset_for)
from .datasets import YinYangSpec, gen_yinyang, load_mnist
from .editing import EditPlan, nearest_other_class, run_edit
from .errors import ArgumentError, KoopRepsError
from .kae import KaeModel, interpolate, surrogate_accuracy, train_kae
from .preprocess import fit_pair
from .resnet import ResidualMlp, capture_representations, evaluate, train_mlp

log = logging.getLogger("koopreps")


def _sha256(path) -> str:
    """Content hash of a file, or of a directory's top-level files (name + bytes)."""
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.is_file()) if path.is_dir() else [path]
    h = hashlib.sha256()
    for f in files:
        if path.is_dir():
            h.update(f.name.encode("utf-8") + b"\0")
        with open(f, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects what a command read and wrote, then emits the manifest."""

    def __init__(self, args: argparse.Namespace, manifest_path: Path):
        self.args = args
        self.manifest_path = Path(manifest_path)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seeds: dict = {}
        self.started = time.time()

    def read(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"input file not found: {path}")
        self.inputs[str(path)] = _sha256(path)
        return path

    def wrote(self, path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    def finish(self) -> None:
        argv = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items()
                if k != "func"}
        manifest = {
            "command": self.args.command,
            "arguments": argv,
            "config": dict(self.config),
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "wall_clock_s": time.time() - self.started,
            "version": __version__,
        }
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _config(run: Run, path, preset: str) -> Config:
    if path is not None:
        run.read(path)
    cfg = load_config(path, preset)
    run.config = cfg
    return cfg


def _write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


# commands ---------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    out = Path(args.out)
    run = Run(args, out.with_name(out.name + ".manifest.json"))
    spec = YinYangSpec(n=args.n, seed=args.seed, big_radius=args.big_radius,
                       dot_radius=args.dot_radius)
    run.seeds = {"data": args.seed}
    run.wrote(archive.save_dataset(out, gen_yinyang(spec)))
    run.finish()


def cmd_load_mnist(args) -> None:
    out = Path(args.out)
    run = Run(args, out / "manifest.json")
    train, test = load_mnist(run.read(args.dir))
    run.wrote(archive.save_dataset(out / "train.kta", train))
    run.wrote(archive.save_dataset(out / "test.kta", test))
    run.finish()


def cmd_train_mlp(args) -> None:
    out = Path(args.out)
    run = Run(args, out.with_name(out.name + ".manifest.json"))
    train = archive.load_dataset(run.read(args.data))
    test = archive.load_dataset(run.read(args.test)) if args.test else None
    cfg = _config(run, args.config, preset_for(train.name))
    override(cfg, "mlp.seed", args.seed)
    override(cfg, "mlp.epochs", args.epochs)
    override(cfg, "mlp.width", args.width)
    tcfg = mlp_train_config(cfg)
    run.seeds = {"mlp": tcfg.seed}
    model = ResidualMlp.init(train.features.shape[1], cfg["mlp.width"], cfg["mlp.blocks"],
                             train.num_classes if test is None else max(train.num_classes, test.num_classes),
                             seed=tcfg.seed)
    model, history = train_mlp(model, train, tcfg, test)
    extra = {"dataset": train.name}
    if test is not None:
        acc = evaluate(model, test)
        extra["test_accuracy"] = acc.to_dict()
        log.info("test accuracy %.2f", acc.overall)
    run.wrote(archive.save_mlp(out, model, extra))
    cols = ["epoch", "loss", "train_acc"] + (["test_acc"] if test is not None else [])
    run.wrote(archive.write_csv(out.with_name(out.stem + ".metrics.csv"), cols,
                                ([row[c] for c in cols] for row in history)))
    run.finish()


def cmd_capture(args) -> None:
    out = Path(args.out)
    run = Run(args, out / "manifest.json")
    model, _ = archive.load_mlp(run.read(args.model))
    data = archive.load_dataset(run.read(args.data))
    for reps in capture_representations(model, data):
        run.wrote(archive.save_reps(out / f"layer_{reps.layer}.kta", reps, data.name))
    run.finish()


def cmd_preprocess(args) -> None:
    out = Path(args.out)
    run = Run(args, out.with_name(out.name + ".manifest.json"))
    reps_i, meta_i = archive.load_reps(run.read(args.reps_i))
    reps_j, _ = archive.load_reps(run.read(args.reps_j))
    if not np.array_equal(reps_i.labels, reps_j.labels):
        raise ArgumentError("representation sets are not row-aligned (labels differ)")
    cfg = _config(run, args.config, preset_for(meta_i.get("dataset")))
    override(cfg, "preprocess.q", args.q)
    override(cfg, "preprocess.normalize", args.normalize)
    q = cfg["preprocess.q"] or None
    t_i, t_j, x_i, x_j = fit_pair(reps_i, reps_j, q, cfg["preprocess.normalize"])
    meta = {"dataset": meta_i.get("dataset"), "layer_i": reps_i.layer, "layer_j": reps_j.layer,
            "q": t_i.q, "normalize": cfg["preprocess.normalize"]}
    run.wrote(archive.save_pair(out, t_i, t_j, x_i, x_j, reps_i.labels, meta))
    run.finish()


def cmd_train_kae(args) -> None:
    out = Path(args.out)
    run = Run(args, out.with_name(out.name + ".manifest.json"))
    t_i, t_j, x_i, x_j, labels, pmeta = archive.load_pair(run.read(args.pair))
    cfg = _config(run, args.config, preset_for(pmeta.get("dataset")))
    override(cfg, "kae.seed", args.seed)
    override(cfg, "kae.epochs", args.epochs)
    override(cfg, "kae.lambda_dist", args.lambda_dist)
    tcfg = kae_train_config(cfg)
    run.seeds = {"kae": tcfg.seed}
    dtype = np.dtype(cfg["kae.dtype"])
    model = KaeModel.init(x_i.shape[1], cfg["kae.hidden"], cfg["kae.observable"], tcfg.seed,
                          cfg["kae.k_steps"], dtype, cfg["kae.leaky_slope"])
    heldout = None
    if args.heldout_pair:
        _, _, hx_i, hx_j, _, _ = archive.load_pair(run.read(args.heldout_pair))
        heldout = (hx_i, hx_j)
    model, history = train_kae(model, x_i, x_j, tcfg, heldout)
    meta = {"dataset": pmeta.get("dataset"), "seed": tcfg.seed,
            "weights": dict(zip(("recon", "linear", "state", "dist"), tcfg.weights.as_tuple())),
            "final_losses": {k: history[-1][k] for k in ("total", "recon", "linear", "state", "dist")}}
    run.wrote(archive.save_kae(out, model, t_i, t_j, meta))
    cols = ["epoch", "total", "recon", "linear", "state", "dist"]
    if heldout is not None:
        cols.append("heldout_state")
    run.wrote(archive.write_csv(out.with_name(out.stem + ".losses.csv"), cols,
                                ([row[c] for c in cols] for row in history)))
    run.finish()


def cmd_eval_surrogate(args) -> None:
    out = Path(args.out)
    run = Run(args, out.with_name(out.name + ".manifest.json"))
    kae, t_i, t_j, meta = archive.load_kae(run.read(args.kae))
    mlp, _ = archive.load_mlp(run.read(args.mlp))
    data = archive.load_dataset(run.read(args.data))
    acc = surrogate_accuracy(kae, t_i, t_j, mlp, data)
    payload = {**acc.to_dict(), "seed": meta.get("seed"), "mlp": evaluate(mlp, data).to_dict()}
    run.wrote(_write_json(out, payload))
    print(json.dumps(payload, sort_keys=True))
    run.finish()


def cmd_interpolate(args) -> None:
    out = Path(args.out_dir)
    run = Run(args, out / "manifest.json")
    kae, _, _, _ = archive.load_kae(run.read(args.kae))
    _, _, x_i, _, labels, pmeta = archive.load_pair(run.read(args.pair))
    if args.k is not None:
        kae.k_steps = args.k
    if args.rows and args.rows < len(x_i):
        rng = np.random.default_rng(args.seed)
        pick = np.sort(rng.choice(len(x_i), size=args.rows, replace=False))
        x_i, labels = x_i[pick], labels[pick]
        run.seeds = {"rows": args.seed}
    for m in range(kae.k_steps + 1):
        decoded = interpolate(kae, x_i, m)
        path = out / f"step_{m:03d}.kta"
        archive.write_archive(path, {"features": decoded, "labels": labels},
                              {"kind": "decoded", "layer": m, "k_steps": kae.k_steps,
                               "dataset": pmeta.get("dataset")})
        run.wrote(path)
    run.finish()


def cmd_topology(args) -> None:
    out = Path(args.out)
    run = Run(args, out / "manifest.json")
    reps, meta = archive.load_reps(run.read(args.reps))
    cfg = _config(run, args.config, preset_for(meta.get("dataset")))
    for key, val in (("max_dim", args.max_dim), ("eps_max", args.eps_max), ("grid", args.grid),
                     ("subsample", args.subsample), ("seed", args.seed), ("method", args.method)):
        override(cfg, f"topology.{key}", val)
    s = cfg.section("topology")
    cloud = topology.PointCloud(reps.features, reps.labels)
    if s["subsample"] and s["subsample"] < cloud.n:
        cloud = topology.subsample(cloud, s["subsample"], s["seed"], s["method"])
        run.seeds = {"subsample": s["seed"]}
    pairs = topology.vr_persistence(cloud, max_dim=s["max_dim"])
    grid = np.linspace(0.0, s["eps_max"], s["grid"])
    curves = [topology.betti_curve(pairs, d, grid) for d in range(s["max_dim"] + 1)]
    run.wrote(archive.write_betti_csv(out / "betti.csv", curves))
    run.wrote(archive.write_diagram_csv(out / "diagram.csv", pairs))
    run.finish()


def pca_projection(features: np.ndarray, components: int) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    xc = x - x.mean(axis=0)
    return xc @ linalg.svd(xc).vt[:components].T


def cmd_project_pca(args) -> None:
    out = Path(args.out)
    run = Run(args, out.with_name(out.name + ".manifest.json"))
    reps, _ = archive.load_reps(run.read(args.reps))
    proj = pca_projection(reps.features, args.components)
    if args.align_to:
        ref, _ = archive.load_reps(run.read(args.align_to))
        ref_proj = pca_projection(ref.features, args.components)
        if ref_proj.shape != proj.shape:
            raise ArgumentError("--align-to must have the same number of rows")
        proj = proj @ linalg.procrustes_rotation(ref_proj, proj)
    header = [f"pc{i + 1}" for i in range(args.components)] + ["label"]
    rows = ([*map(float, r), int(lbl)] for r, lbl in zip(proj, reps.labels))
    run.wrote(archive.write_csv(out, header, rows))
    run.finish()


def cmd_edit(args) -> None:
    out = Path(args.out)
    run = Run(args, out / "manifest.json")
    kae, t_i, t_j, meta = archive.load_kae(run.read(args.kae))
    mlp, _ = archive.load_mlp(run.read(args.mlp))
    _, _, x_i, x_j, labels, pmeta = archive.load_pair(run.read(args.pair))
    data = archive.load_dataset(run.read(args.data))
    cfg = _config(run, args.config, preset_for(pmeta.get("dataset")))
    override(cfg, "edit.ridge", args.ridge)
    override(cfg, "edit.subsample", args.subsample)
    override(cfg, "edit.seed", args.seed)
    override(cfg, "edit.target_rule", args.target_rule)
    s = cfg.section("edit")
    merge = args.merge_into
    if merge is None:
        merge = nearest_other_class(kae.encode(x_j), labels, args.forget)
    plan = EditPlan(args.forget, merge, s["subsample"], s["ridge"], s["target_rule"], s["seed"])
    run.seeds = {"edit": plan.seed}
    result = run_edit(kae, mlp, t_i, t_j, x_i, x_j, labels, data, plan)
    payload = result.to_dict()
    run.wrote(_write_json(out / "edit.json", payload))
    run.wrote(archive.write_archive(out / "edited_operator.kta",
                                    {"edited_operator": result.edited_operator},
                                    {"kind": "edited_operator", "plan": payload["plan"]}))
    edited = kae.with_operator(result.edited_operator)
    run.wrote(archive.save_kae(out / "edited_kae.kta", edited, t_i, t_j,
                               {**{k: v for k, v in meta.items() if k not in
                                   ("kind", "d", "hidden", "observable", "k_steps", "leaky_slope")},
                                "edit": payload["plan"]}))
    print(json.dumps({"before": payload["before"], "after": payload["after"]}, sort_keys=True))
    run.finish()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="koopreps", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a Yin-Yang dataset archive")
    g.add_argument("kind", choices=["yinyang"])
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--big-radius", type=float, default=0.5)
    g.add_argument("--dot-radius", type=float, default=0.1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("load-mnist", help="convert IDX files into train/test archives")
    g.add_argument("--dir", required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_load_mnist)

    g = sub.add_parser("train-mlp", help="train the residual MLP")
    g.add_argument("--data", required=True)
    g.add_argument("--test")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_train_mlp)

    g = sub.add_parser("capture", help="dump per-layer representations")
    g.add_argument("--model", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_capture)

    g = sub.add_parser("preprocess", help="centre/project/scale/align a representation pair")
    g.add_argument("--reps-i", required=True)
    g.add_argument("--reps-j", required=True)
    g.add_argument("--q", type=int)
    g.add_argument("--normalize", choices=["rms", "frobenius"])
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_preprocess)

    g = sub.add_parser("train-kae", help="train a Koopman autoencoder on a preprocessed pair")
    g.add_argument("--pair", required=True)
    g.add_argument("--heldout-pair")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lambda-dist", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_train_kae)

    g = sub.add_parser("eval-surrogate", help="accuracy of MLP head on KAE predictions")
    g.add_argument("--kae", required=True)
    g.add_argument("--mlp", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", default="surrogate.json")
    g.set_defaults(func=cmd_eval_surrogate)

    g = sub.add_parser("interpolate", help="decode every intermediate operator step")
    g.add_argument("--kae", required=True)
    g.add_argument("--pair", required=True)
    g.add_argument("--k", type=int)
    g.add_argument("--rows", type=int, default=0, help="random subset of rows (0 = all)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_interpolate)

    g = sub.add_parser("topology", help="persistence diagram and Betti curves")
    g.add_argument("--reps", required=True)
    g.add_argument("--max-dim", type=int, choices=[0, 1])
    g.add_argument("--eps-max", type=float)
    g.add_argument("--grid", type=int)
    g.add_argument("--subsample", type=int, help="0 disables subsampling")
    g.add_argument("--method", choices=["uniform", "maxmin"])
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_topology)

    g = sub.add_parser("project-pca", help="top principal components as CSV")
    g.add_argument("--reps", required=True)
    g.add_argument("--components", type=int, default=3)
    g.add_argument("--align-to")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_project_pca)

    g = sub.add_parser("edit", help="unlearn a class by editing the Koopman operator")
    g.add_argument("--kae", required=True)
    g.add_argument("--mlp", required=True)
    g.add_argument("--pair", required=True, help="preprocessed training pair for edit keys")
    g.add_argument("--data", required=True, help="evaluation dataset")
    g.add_argument("--forget", type=int, required=True)
    g.add_argument("--merge-into", type=int)
    g.add_argument("--ridge", type=float)
    g.add_argument("--subsample", type=int)
    g.add_argument("--target-rule", choices=["centroid", "nearest"])
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_edit)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KoopRepsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
