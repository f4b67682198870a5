"""Command line entry point: gen-data, train, sample, eval, probe, bench-speed.

Exit codes: 0 ok, 2 configuration error, 3 numerical divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .benchmark import bench_speed
from .config import ConfigError
from .evaluation import PROBE_GRID, evaluate, probe_contextual, spanning_tree_augment
from .graphs import (DATASET_RANGES, DatasetSpec, GraphFormatError, deserialize_corpus, generate_dataset,
                     serialize_corpus, train_test_split, write_manifest)
from .nvdiff_e import EnaConfig, EnaScoreNetwork
from .sampling import SolverConfig, sample_graphs, write_trajectories
from .score_net import ScoreNetConfig, ScoreNetwork
from .sde import VpsdeConfig
from .training import (CheckpointError, DivergenceError, ModelBundle, Trainer, bundle_from_checkpoint,
                       histogram_from_checkpoint, load_checkpoint)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "NVDIFF_OUTPUT_ROOT"

log = logging.getLogger("nvdiff")


def output_path(p) -> Path:
    """Relative output paths are placed under $NVDIFF_OUTPUT_ROOT when it is set."""
    p = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / p if root and not p.is_absolute() else p


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_run_manifest(run_dir: Path):
    files = sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {str(p.relative_to(run_dir)): git_blob_hash(p) for p in files}
    (run_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def summary(**fields):
    print(json.dumps(fields, sort_keys=True))


def _require(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")


# ----------------------------------------------------------------------------- commands


def cmd_gen_data(args):
    if args.spec in DATASET_RANGES:
        spec = DatasetSpec(args.spec, count=args.count, seed=args.seed)
        frac = 0.8
    else:
        _require(args.spec)
        cfg = config_mod.load(args.spec)
        if cfg.dataset is None:
            raise ConfigError(["dataset: gen-data needs a generated dataset, not a corpus file"])
        spec, frac = cfg.dataset, cfg.eval.get("train_fraction", 0.8)
    out = output_path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    corpus = generate_dataset(spec, rng)
    train, test = train_test_split(corpus, frac, rng)
    serialize_corpus(train, out / "train.bin")
    serialize_corpus(test, out / "test.bin")
    write_manifest(out / "manifest.json", spec, {"train.bin": len(train), "test.bin": len(test)})
    summary(command="gen-data", status="ok", dataset=spec.name, train=len(train), test=len(test), output=str(out))


def _load_corpora(cfg, rng):
    if cfg.corpus_path:
        _require(cfg.corpus_path)
        corpus = deserialize_corpus(cfg.corpus_path)
    else:
        corpus = generate_dataset(cfg.dataset, np.random.default_rng(cfg.dataset.seed))
    return train_test_split(corpus, cfg.eval.get("train_fraction", 0.8), rng)


def cmd_train(args):
    _require(args.config)
    raw = config_mod.read_raw(args.config)
    if args.max_steps is not None:
        raw.setdefault("train", {})["max_steps"] = args.max_steps
    if args.epochs is not None:
        raw.setdefault("train", {})["epochs"] = args.epochs
    if args.output:
        raw["output_dir"] = args.output
    cfg = config_mod.from_dict(raw)
    torch.set_num_threads(1)
    run_dir = output_path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for stale in ("metrics.csv",):
        (run_dir / stale).unlink(missing_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config_mod.resolve(cfg.raw), sort_keys=True, indent=1) + "\n")
    train, test = _load_corpora(cfg, np.random.default_rng(cfg.seed))
    serialize_corpus(train, run_dir / "train.bin")
    serialize_corpus(test, run_dir / "test.bin")
    bundle = ModelBundle(cfg.encoder, cfg.decoder, cfg.score, seed=cfg.seed)
    trainer = Trainer(bundle, train, cfg.train, cfg.sde, run_dir,
                      extra_meta={"solver": cfg.solver.to_dict(), "eval": cfg.eval})
    t0 = time.time()
    trainer.run()
    write_run_manifest(run_dir)
    last = trainer.history[-1] if trainer.history else {}
    summary(command="train", status="ok", steps=trainer.step_count, epochs=trainer.epoch,
            loss_vae=last.get("loss_vae"), loss_sgm=last.get("loss_sgm"), seconds=round(time.time() - t0, 3),
            checkpoint=str(run_dir / "checkpoint.bin"))


def _solver_from_args(args, ckpt):
    base = dict(ckpt.meta.get("solver", {}))
    if args.solver:
        base["kind"] = {"ode": "probability_flow_ode", "em": "euler_maruyama"}.get(args.solver, args.solver)
    if args.tol is not None:
        base["atol"] = base["rtol"] = args.tol
    if args.steps is not None:
        base["num_steps"] = args.steps
    return SolverConfig(**base)


def cmd_sample(args):
    _require(args.checkpoint)
    ckpt = load_checkpoint(args.checkpoint)
    torch.set_num_threads(1)
    bundle = bundle_from_checkpoint(ckpt)
    solver = _solver_from_args(args, ckpt)
    rng = np.random.default_rng(args.seed)
    grid = [float(x) for x in args.trajectory_grid.split(",")] if args.trajectory_grid else None
    t0 = time.time()
    graphs, trajs = sample_graphs(bundle, histogram_from_checkpoint(ckpt), args.count, solver, rng,
                                  VpsdeConfig(**ckpt.meta["sde"]), mode=args.decode, t_grid=grid)
    seconds = time.time() - t0
    out = output_path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    serialize_corpus(graphs, out)
    if trajs:
        write_trajectories(out.with_suffix(".trajectories.csv"), trajs)
    summary(command="sample", status="ok", count=len(graphs), solver=solver.kind, seconds=round(seconds, 3),
            output=str(out))


def cmd_eval(args):
    for p in (args.samples, args.test):
        _require(p)
    samples, test = deserialize_corpus(args.samples), deserialize_corpus(args.test)
    train = deserialize_corpus(args.train) if args.train else None
    report = evaluate(samples, test, train, use_largest_component=args.largest_component)
    out = output_path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out, out.with_suffix(".csv"))
    summary(command="eval", status="ok", mmd_degree=report.mmd_degree, mmd_cluster=report.mmd_cluster,
            mmd_orbit=report.mmd_orbit, uniqueness=report.uniqueness, novelty=report.novelty, output=str(out))


def cmd_probe(args):
    for p in (args.checkpoint, args.corpus):
        _require(p)
    torch.set_num_threads(1)
    ckpt = load_checkpoint(args.checkpoint)
    bundle = bundle_from_checkpoint(ckpt)
    rng = np.random.default_rng(args.seed)
    corpus = deserialize_corpus(args.corpus)
    if args.augment_trees:
        corpus = spanning_tree_augment(corpus, rng)
    res = probe_contextual(bundle, corpus, PROBE_GRID, args.task, rng, repeats=args.repeats,
                           sde_cfg=VpsdeConfig(**ckpt.meta["sde"]))
    out = output_path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "metric", "baseline"])
        for t, m in zip(res["t"], res["metric"]):
            w.writerow([t, repr(m), repr(res["baseline"])])
    summary(command="probe", status="ok", task=args.task, points=len(res["t"]), baseline=res["baseline"],
            output=str(out))


def _score_net_for_bench(spec):
    if spec.startswith("preset:"):
        name = spec.split(":", 1)[1]
        if name not in config_mod.PRESETS:
            raise ConfigError([f"bench-speed: unknown preset {name!r}"])
        return ScoreNetwork(ScoreNetConfig(**config_mod.PRESETS[name]["score"]), torch.Generator().manual_seed(0))
    _require(spec)
    return bundle_from_checkpoint(load_checkpoint(spec)).score


def _ena_for_bench(spec):
    if spec.startswith("preset:"):
        name = spec.split(":", 1)[1]
        if name not in config_mod.PRESETS:
            raise ConfigError([f"bench-speed: unknown preset {name!r}"])
        s = config_mod.PRESETS[name]["score"]
        e = config_mod.PRESETS[name]["encoder"]
        cfg = EnaConfig(s["num_layers"], s["hidden_dim"], s["num_heads"], s["time_emb_dim"], e["num_node_types"],
                        e["num_edge_types"])
        return EnaScoreNetwork(cfg, torch.Generator().manual_seed(0))
    _require(spec)
    ckpt = load_checkpoint(spec)
    net = EnaScoreNetwork(EnaConfig(**ckpt.meta["ena"]))
    net.load_state_dict({k[len("ena/"):]: v for k, v in ckpt.tensors.items() if k.startswith("ena/")})
    return net


def cmd_bench_speed(args):
    torch.set_num_threads(1)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows, (s_nv, s_nve) = bench_speed(_score_net_for_bench(args.nvdiff), _ena_for_bench(args.nvdiffe), sizes)
    out = output_path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "seconds_nvdiff", "seconds_nvdiffe"])
        w.writerows(rows)
    summary(command="bench-speed", status="ok", slope_nvdiff=round(s_nv, 4), slope_nvdiffe=round(s_nve, 4),
            output=str(out))


# ----------------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="nvdiff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus and its train/test split")
    g.add_argument("spec", help="dataset name or a JSON experiment config")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--count", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("config")
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--output", default=None, help="run directory (overrides output_dir)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw graphs from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--count", type=int, default=128)
    s.add_argument("--solver", choices=["ode", "em", "probability_flow_ode", "euler_maruyama"], default=None)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--decode", choices=["argmax", "sample"], default="argmax")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trajectory-grid", default=None, help="comma-separated times to export")
    s.add_argument("-o", "--output", default="samples.bin")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="MMD / uniqueness / novelty of samples against a test corpus")
    e.add_argument("samples")
    e.add_argument("test")
    e.add_argument("--train", default=None)
    e.add_argument("--largest-component", action="store_true")
    e.add_argument("-o", "--output", default="eval.json")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("probe", help="contextual-vector probe over the 21-point time grid")
    r.add_argument("checkpoint")
    r.add_argument("corpus")
    r.add_argument("--task", choices=["cycle_detect", "diameter", "degree_class_count"], default="cycle_detect")
    r.add_argument("--repeats", type=int, default=5)
    r.add_argument("--augment-trees", action="store_true", help="add a random spanning tree of every graph")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("-o", "--output", default="probe.csv")
    r.set_defaults(func=cmd_probe)

    b = sub.add_parser("bench-speed", help="per-step sampling time versus graph size")
    b.add_argument("nvdiff", help="checkpoint path or preset:<name>")
    b.add_argument("nvdiffe", help="checkpoint path or preset:<name>")
    b.add_argument("--sizes", default="50,100,200,400")
    b.add_argument("-o", "--output", default="speed.csv")
    b.set_defaults(func=cmd_bench_speed)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"error: diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, GraphFormatError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
