"""Command-line entry point.

Subcommands: distill (teacher pretrain + condensation), eval (student
protocol on checkpoints or coreset manifests), coreset (baseline
selection), render (polarity maps as PPM), inspect (grid statistics).
Every run writes a manifest with all resolved settings and seeds, so a run
is exactly reproducible from its manifest.  EVDISTILL_THREADS overrides the
configured torch thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import __version__, coreset as coreset_mod
from .config import RunConfig, load_config
from .container import load_container, save_container
from .datasets import LabeledGrids, load_grids, load_nmnist_split
from .distill import (
    TeacherHandle,
    checkpoint,
    config_hash,
    distill_run,
    extract_features,
    pretrain_teacher,
    restore,
    write_history_csv,
)
from .errors import ConfigError, ContractError, EvdistillError
from .evaluation import (
    efficiency_report,
    evaluate_protocol,
    write_efficiency_csv,
    write_results_csv,
)
from .events import EventGrid, GridMode
from .quantizer import synth_to_grids
from .render import render_grid
from .seeding import seed_stream
from .snn import load_weights, save_weights
from .toydata import make_toy_dataset


def _apply_threads(cfg: RunConfig | None) -> None:
    env = os.environ.get("EVDISTILL_THREADS", "")
    if env:
        torch.set_num_threads(max(1, int(env)))
    elif cfg is not None and cfg["run"]["threads"] > 0:
        torch.set_num_threads(cfg["run"]["threads"])


def _load_datasets(cfg: RunConfig) -> tuple[LabeledGrids, LabeledGrids]:
    d = cfg["data"]
    mode = cfg.grid_mode()
    if d["source"] == "toy":
        return make_toy_dataset(cfg.toy_config(), seed_stream(cfg["run"]["seed"], "toy-data"))
    if d["source"] == "nmnist":
        if not d["path"]:
            raise ConfigError("[data] path must point at the dataset root for source=nmnist")
        common = dict(t_bins=d["t_bins"], mode=mode, pad_to=d["pad_to"], resize_to=d["resize_to"])
        train = load_nmnist_split(d["path"], "Train", limit_per_class=d["limit_per_class"], **common)
        test = load_nmnist_split(d["path"], "Test", limit_per_class=d["test_limit_per_class"], **common)
        return train, test
    # container: <path>/train.evd + <path>/test.evd
    train = load_grids(os.path.join(d["path"], "train.evd"))
    test = load_grids(os.path.join(d["path"], "test.evd"))
    return train, test


def _out_dir(args, cfg: RunConfig) -> str:
    out = args.out or cfg["run"]["out_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _config_with_seed(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    return cfg


# ---------------------------------------------------------------------------
# Subcommands


def cmd_distill(args) -> int:
    cfg = _config_with_seed(args)
    _apply_threads(cfg)
    out = _out_dir(args, cfg)
    train, test = _load_datasets(cfg)
    classes = train.classes
    spec = cfg.network_spec(train.grid_shape[1:], classes)
    t = cfg["teacher"]
    master = cfg["run"]["seed"]
    if args.teacher:
        teacher = TeacherHandle(net=load_weights(spec, args.teacher))
        teacher_acc = None
    else:
        teacher = pretrain_teacher(
            spec, train,
            epochs=t["epochs"], lr=t["lr"], batch_size=t["batch_size"],
            seed=seed_stream(master, "teacher"),
            holdout=(test.to_tensor(), test.label_tensor()),
            momentum=t["momentum"],
        )
        teacher_acc = teacher.accuracy
        save_weights(teacher.net, os.path.join(out, "teacher.evd"))

    dcfg = cfg.distill_config()
    result = distill_run(dcfg, teacher, train)
    ckpt_path = os.path.join(out, "checkpoint.evd")
    checkpoint(result.synth, dcfg, ckpt_path)
    write_history_csv(os.path.join(out, "loss_history.csv"), result.history)
    report = efficiency_report(
        stored_samples=classes * dcfg.ipc,
        full_samples=len(train),
        seconds_per_iteration=result.seconds_per_iteration,
    )
    write_efficiency_csv(os.path.join(out, "efficiency.csv"), report)
    _write_manifest(
        os.path.join(out, "manifest.json"),
        {
            "kind": "distill-run",
            "version": __version__,
            "master_seed": master,
            "config": cfg.resolved(),
            "config_sha": config_hash(dcfg),
            "teacher_accuracy": teacher_acc,
            "dataset": {"train": len(train), "test": len(test), "classes": classes},
            "artifacts": {
                "checkpoint": "checkpoint.evd",
                "loss_history": "loss_history.csv",
                "efficiency": "efficiency.csv",
            },
        },
    )
    if teacher_acc is not None:
        print(f"teacher accuracy: {teacher_acc:.4f}")
    print(f"distilled {classes * dcfg.ipc} samples in {dcfg.iterations} iterations -> {ckpt_path}")
    return 0


def _coreset_grids(manifest_path: str, train: LabeledGrids) -> tuple[torch.Tensor, torch.Tensor]:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "coreset":
        raise ContractError(f"{manifest_path} is not a coreset manifest")
    indices = np.concatenate([np.asarray(v, dtype=np.int64) for _, v in sorted(manifest["indices"].items())])
    subset = train.subset(indices)
    return subset.to_tensor(), subset.label_tensor()


def cmd_eval(args) -> int:
    cfg = _config_with_seed(args)
    _apply_threads(cfg)
    out = _out_dir(args, cfg)
    train, test = _load_datasets(cfg)
    spec = cfg.network_spec(train.grid_shape[1:], train.classes)
    train_sets = []
    sources = []
    for path in args.checkpoint or []:
        synth = restore(path)
        grids = synth_to_grids(synth)
        stack = torch.stack([torch.from_numpy(g.values).float() for g in grids])
        train_sets.append((stack, torch.from_numpy(synth.labels)))
        sources.append(path)
    for path in args.coreset or []:
        train_sets.append(_coreset_grids(path, train))
        sources.append(path)
    if not train_sets:
        raise ContractError("eval needs at least one --checkpoint or --coreset input")
    e = cfg["eval"]
    result = evaluate_protocol(
        train_sets, spec, test.to_tensor(), test.label_tensor(),
        n_models=e["n_models"], epochs=e["student_epochs"], lr=e["student_lr"],
        batch_size=e["student_batch"], master_seed=cfg["run"]["seed"],
        momentum=e["student_momentum"],
    )
    results_path = os.path.join(out, "results.csv")
    write_results_csv(results_path, result)
    _write_manifest(
        os.path.join(out, "eval_manifest.json"),
        {
            "kind": "eval-run",
            "version": __version__,
            "master_seed": cfg["run"]["seed"],
            "config": cfg.resolved(),
            "inputs": sources,
            "trials": len(result.trials),
        },
    )
    flag = " (single trial)" if result.single_trial else ""
    print(f"mean accuracy {result.mean:.4f} +/- {result.std:.4f} over {len(result.trials)} trials{flag}")
    print(f"results -> {results_path}")
    return 0


def cmd_coreset(args) -> int:
    cfg = _config_with_seed(args)
    _apply_threads(cfg)
    out = _out_dir(args, cfg)
    train, test = _load_datasets(cfg)
    ipc = args.ipc or cfg["distill"]["ipc"]
    seed = seed_stream(cfg["run"]["seed"], f"coreset/{args.method}")
    if args.method == "random":
        selection = coreset_mod.random_select(train.labels, ipc, seed)
    else:
        if not args.teacher:
            raise ConfigError(f"method {args.method} needs --teacher weights for the feature space")
        spec = cfg.network_spec(train.grid_shape[1:], train.classes)
        teacher = TeacherHandle(net=load_weights(spec, args.teacher))
        feats = extract_features(
            teacher, train.to_tensor(), spec.feature_layer(), time_averaged=True
        ).numpy()
        if args.method == "herding":
            selection = coreset_mod.herding_select(feats, train.labels, ipc)
        else:
            selection = coreset_mod.kcenter_select(feats, train.labels, ipc)
    path = os.path.join(out, f"coreset_{args.method}.json")
    _write_manifest(
        path,
        {
            "kind": "coreset",
            "method": args.method,
            "ipc": ipc,
            "seed": seed,
            "indices": {str(c): [int(i) for i in idx] for c, idx in selection.items()},
        },
    )
    print(f"selected {ipc} per class with {args.method} -> {path}")
    return 0


def cmd_render(args) -> int:
    _apply_threads(None)
    os.makedirs(args.out, exist_ok=True)
    tensors, meta = load_container(args.input)
    if meta.get("kind") == "checkpoint":
        synth = restore(args.input)
        grids = synth_to_grids(synth)
        labels = synth.labels
        n_levels = synth.n_levels
    elif meta.get("kind") == "grids":
        data = load_grids(args.input)
        grids = [EventGrid(data.grids[i], data.mode) for i in range(len(data))]
        labels = data.labels
        n_levels = None
    else:
        raise ContractError(f"{args.input}: cannot render container kind {meta.get('kind')!r}")
    written = 0
    for i, grid in enumerate(grids):
        stem = f"sample{i:03d}_class{int(labels[i])}"
        written += len(render_grid(grid, args.out, stem, n_levels))
    print(f"wrote {written} frames to {args.out}")
    return 0


def cmd_inspect(args) -> int:
    tensors, meta = load_container(args.input)
    print(f"container kind: {meta.get('kind', '?')}")
    for key, val in sorted(meta.items()):
        if key != "kind":
            print(f"  meta {key}: {val}")
    for name, arr in sorted(tensors.items()):
        line = f"  tensor {name}: shape {tuple(arr.shape)}, dtype {arr.dtype}"
        if np.issubdtype(arr.dtype, np.number) and arr.size:
            line += f", min {arr.min()}, max {arr.max()}"
        print(line)
    if meta.get("kind") == "checkpoint":
        synth = restore(args.input)
        grids = synth_to_grids(synth)
        values = np.stack([g.values for g in grids])
        occupancy = float((values > 0).mean())
        print(f"  hard grids: {values.shape}, occupancy {occupancy:.4f}")
        print(f"  value histogram: {np.bincount(values.ravel(), minlength=synth.n_levels).tolist()}")
    elif meta.get("kind") == "grids" and "grids" in tensors:
        values = tensors["grids"]
        print(f"  occupancy {float((values > 0).mean()):.4f}")
        print(f"  labels: {np.bincount(tensors['labels']).tolist()}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evdistill", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output directory (defaults to [run] out_dir)")

    p = sub.add_parser("distill", help="pretrain a teacher and distill a synthetic set")
    common(p)
    p.add_argument("--teacher", default=None, help="load teacher weights instead of pretraining")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="train students on distilled/selected data and score them")
    common(p)
    p.add_argument("--checkpoint", action="append", help="distillation checkpoint (repeatable)")
    p.add_argument("--coreset", action="append", help="coreset manifest (repeatable)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("coreset", help="select a real-sample baseline")
    common(p)
    p.add_argument("--method", required=True, choices=["random", "herding", "kcenter"])
    p.add_argument("--ipc", type=int, default=None)
    p.add_argument("--teacher", default=None, help="teacher weights for feature-based methods")
    p.set_defaults(func=cmd_coreset)

    p = sub.add_parser("render", help="render grids as per-bin polarity pixmaps")
    p.add_argument("--input", required=True, help="checkpoint or grids container")
    p.add_argument("--out", required=True, help="output directory for PPM frames")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect", help="print container statistics")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EvdistillError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
