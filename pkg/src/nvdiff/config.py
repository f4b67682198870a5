"""Experiment configuration: named presets plus JSON overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .graphs import DATASET_RANGES, DatasetSpec
from .sampling import SolverConfig
from .score_net import ScoreNetConfig
from .sde import VpsdeConfig
from .training import TrainConfig
from .vae import DecoderConfig, EncoderConfig


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _preset(enc, dec, sgm, train, samples, tol, kv=1, ke=1, dataset=None):
    e_layers, e_hidden, latent, e_var = enc
    d_layers, d_hidden, ft_epochs, ft_var = dec
    s_layers, s_hidden, heads = sgm
    lr, kl, epochs, bs = train
    return {
        "dataset": dataset or {},
        "encoder": {"num_layers": e_layers, "hidden_dim": e_hidden, "latent_dim": latent, "noise_dim": 8,
                    "fixed_var": e_var, "num_node_types": kv, "num_edge_types": ke},
        "decoder": {"num_layers": d_layers, "hidden_dim": d_hidden, "latent_dim": latent, "num_node_types": kv,
                    "num_edge_types": ke},
        "score": {"num_layers": s_layers, "hidden_dim": s_hidden, "num_heads": heads, "time_emb_dim": 16,
                  "latent_dim": latent},
        "sde": {},
        "train": {"epochs": epochs, "batch_size": bs, "lr_vae": lr, "lr_sgm": lr, "weight_decay": 1e-4,
                  "kl_target": kl, "finetune_epochs": ft_epochs, "finetune_noise_var": ft_var,
                  "fixed_prior_pretrain": True},
        "solver": {"kind": "probability_flow_ode", "atol": tol, "rtol": tol},
        "eval": {"num_samples": samples, "train_fraction": 0.8, "use_largest_component": False},
    }


PRESETS = {
    # molecule columns need an external corpus file: dataset.corpus_path
    "qm9": _preset((3, 64, 16, 0.01), (3, 64, 200, 1e-4), (3, 64, 4), (1e-4, 0.7, 1000, 256), 10000, 1e-4,
                   kv=4, ke=3, dataset={"name": "qm9"}),
    "zinc": _preset((5, 64, 32, 0.0025), (3, 64, 200, 0.025), (5, 64, 4), (1e-4, 0.7, 2000, 256), 10000, 1e-4,
                    kv=9, ke=3, dataset={"name": "zinc"}),
    "community": _preset((3, 64, 8, 0.01), (1, 64, 0, 0.0), (3, 32, 2), (1e-4, 1.0, 15000, 4), 128, 1e-4,
                         dataset={"name": "community"}),
    "ego": _preset((3, 64, 4, 0.01), (1, 64, 0, 0.0), (3, 32, 4), (1e-4, 1.0, 15000, 4), 128, 1e-4,
                   dataset={"name": "ego"}),
    "community-small": _preset((3, 32, 4, 0.01), (1, 32, 0, 0.0), (3, 16, 2), (1e-3, 1.0, 4000, 8), 128, 1e-5,
                               dataset={"name": "community-small"}),
    "ego-small": _preset((3, 32, 4, 0.01), (1, 32, 0, 0.0), (3, 16, 4), (1e-3, 1.0, 4000, 8), 128, 1e-5,
                         dataset={"name": "ego-small"}),
}
PRESETS["ego"]["eval"]["use_largest_component"] = True
PRESETS["ego-small"]["eval"]["use_largest_component"] = True

EVAL_KEYS = {"num_samples", "train_fraction", "use_largest_component", "metrics", "decode_mode"}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec | None
    corpus_path: str | None
    encoder: EncoderConfig
    decoder: DecoderConfig
    score: ScoreNetConfig
    sde: VpsdeConfig
    train: TrainConfig
    solver: SolverConfig
    eval: dict
    output_dir: str
    seed: int
    raw: dict

    def to_dict(self):
        return copy.deepcopy(self.raw)


def _build(cls, section, data, errors):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    for k in unknown:
        errors.append(f"{section}.{k}: unknown field")
    kwargs = {k: v for k, v in data.items() if k in known}
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as e:
        for msg in str(e).split("; "):
            errors.append(f"{section}: {msg}")
        return None
    return obj


def resolve(raw: dict) -> dict:
    """Apply ``"preset"`` inheritance: the named preset is the base, the rest are overrides."""
    raw = dict(raw)
    name = raw.pop("preset", None)
    if name is None:
        return raw
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown preset {name!r} (choose from {sorted(PRESETS)})"])
    return deep_merge(PRESETS[name], raw) | {"preset": name}


def from_dict(raw: dict) -> ExperimentConfig:
    """Validate a resolved configuration; every violated field is reported at once."""
    data = resolve(raw)
    errors: list[str] = []
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        errors.append("seed: must be a non-negative integer")
        seed = 0
    ds = dict(data.get("dataset", {}))
    corpus_path = ds.pop("corpus_path", None)
    spec = None
    if corpus_path is None:
        if ds.get("name") not in DATASET_RANGES:
            errors.append(f"dataset.name: {ds.get('name')!r} has no generator; supply dataset.corpus_path")
        else:
            spec = _build(DatasetSpec, "dataset", ds | {"seed": ds.get("seed", seed)}, errors)
    enc = _build(EncoderConfig, "encoder", data.get("encoder", {}), errors)
    dec = _build(DecoderConfig, "decoder", data.get("decoder", {}), errors)
    score = _build(ScoreNetConfig, "score", data.get("score", {}), errors)
    vp = _build(VpsdeConfig, "sde", data.get("sde", {}), errors)
    train = _build(TrainConfig, "train", data.get("train", {}) | {"seed": data.get("train", {}).get("seed", seed)},
                   errors)
    solver = _build(SolverConfig, "solver", data.get("solver", {}), errors)
    ev = dict(data.get("eval", {}))
    for k in sorted(set(ev) - EVAL_KEYS):
        errors.append(f"eval.{k}: unknown field")
    if not 0 < ev.get("train_fraction", 0.8) < 1:
        errors.append("eval.train_fraction: must lie in (0, 1)")
    if ev.get("num_samples", 128) < 1:
        errors.append("eval.num_samples: must be >= 1")
    if enc and dec and score:
        dims = {"encoder": enc.latent_dim, "decoder": dec.latent_dim, "score": score.latent_dim}
        if len(set(dims.values())) > 1:
            errors.append(f"latent_dim: must agree across encoder/decoder/score, got {dims}")
        if enc.num_node_types != dec.num_node_types or enc.num_edge_types != dec.num_edge_types:
            errors.append("num_node_types/num_edge_types: encoder and decoder disagree")
    known_top = {"preset", "dataset", "encoder", "decoder", "score", "sde", "train", "solver", "eval", "output_dir",
                 "seed"}
    for k in sorted(set(data) - known_top):
        errors.append(f"{k}: unknown section")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(spec, corpus_path, enc, dec, score, vp, train, solver, ev,
                            data.get("output_dir", "runs/default"), seed, data)


def read_raw(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: not valid JSON ({e})"]) from e
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a JSON object"])
    return raw


def load(path) -> ExperimentConfig:
    return from_dict(read_raw(path))
