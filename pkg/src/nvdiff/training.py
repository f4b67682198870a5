"""Alternating VAE / latent score-model training, decoder finetuning and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from . import sde
from .batching import GraphBatch, collate
from .graphs import GraphSample, SizeHistogram, size_histogram
from .score_net import ScoreNetConfig, ScoreNetwork
from .vae import Decoder, DecoderConfig, Encoder, EncoderConfig, batch_log_likelihood

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4000
    batch_size: int = 8
    lr_vae: float = 1e-3
    lr_sgm: float = 1e-3
    weight_decay: float = 1e-4
    kl_target: float = 1.0
    kl_warmup_fraction: float = 0.1
    grad_clip_norm: float = 1.0
    finetune_epochs: int = 0
    finetune_noise_var: float = 0.0
    seed: int = 0
    time_sampling: str = "importance"
    fixed_prior_pretrain: bool = False
    max_steps: int | None = None
    checkpoint_every: int = 1000
    lr_schedule: str = "constant"

    def validate(self) -> list[str]:
        errs = []
        if self.epochs < 0:
            errs.append("epochs must be >= 0")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        for name in ("lr_vae", "lr_sgm", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                errs.append(f"{name} must be positive")
        if self.weight_decay < 0:
            errs.append("weight_decay must be >= 0")
        if not 0 < self.kl_target <= 1:
            errs.append("kl_target must lie in (0, 1]")
        if not 0 <= self.kl_warmup_fraction <= 1:
            errs.append("kl_warmup_fraction must lie in [0, 1]")
        if self.finetune_epochs < 0 or self.finetune_noise_var < 0:
            errs.append("finetune_epochs and finetune_noise_var must be >= 0")
        if self.time_sampling not in ("uniform", "importance"):
            errs.append("time_sampling must be 'uniform' or 'importance'")
        if self.max_steps is not None and self.max_steps < 0:
            errs.append("max_steps must be >= 0")
        if self.checkpoint_every < 1:
            errs.append("checkpoint_every must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            errs.append("lr_schedule must be 'constant' or 'cosine'")
        return errs

    def __post_init__(self):
        errs = self.validate()
        if errs:
            raise ValueError("; ".join(errs))

    def to_dict(self):
        return asdict(self)


def kl_schedule(cfg: TrainConfig, epoch) -> float:
    """Linear ramp from 0 to kl_target over the first kl_warmup_fraction of the epochs."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    warm = cfg.kl_warmup_fraction * cfg.epochs
    if warm <= 0 or epoch >= warm:
        return float(cfg.kl_target)
    return float(cfg.kl_target * epoch / warm)


class LatentNormalizer(nn.Module):
    """Running per-dimension mean / std of sampled latents Z0 (momentum 0.99).

    Statistics of samples rather than posterior means keep std >= the encoder std, so the
    normaliser cannot amplify a shrinking code without bound.
    """

    def __init__(self, dim, momentum=0.99):
        super().__init__()
        self.momentum = momentum
        self.register_buffer("mean", torch.zeros(dim))
        self.register_buffer("std", torch.ones(dim))
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))

    @torch.no_grad()
    def update(self, values):
        # values: (M, d) latent rows from valid nodes
        if values.shape[0] < 2:
            return
        mu = values.mean(0)
        sd = values.std(0).clamp(min=1e-4)
        if not bool(self.initialized):
            self.mean.copy_(mu)
            self.std.copy_(sd)
            self.initialized.fill_(True)
        else:
            self.mean.mul_(self.momentum).add_((1 - self.momentum) * mu)
            self.std.mul_(self.momentum).add_((1 - self.momentum) * sd)

    def normalize(self, z):
        return (z - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean


class ModelBundle(nn.Module):
    """Encoder (phi), decoder (psi), latent score network (theta) and the latent normaliser."""

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, score_cfg: ScoreNetConfig, seed=0):
        super().__init__()
        if not enc_cfg.latent_dim == dec_cfg.latent_dim == score_cfg.latent_dim:
            raise ValueError("latent dimension must agree across encoder, decoder and score network")
        gen = torch.Generator().manual_seed(seed)
        self.enc_cfg, self.dec_cfg, self.score_cfg = enc_cfg, dec_cfg, score_cfg
        self.encoder = Encoder(enc_cfg, gen)
        self.decoder = Decoder(dec_cfg, gen)
        self.score = ScoreNetwork(score_cfg, gen)
        self.normalizer = LatentNormalizer(enc_cfg.latent_dim)

    def vae_parameters(self):
        return list(self.encoder.parameters()) + list(self.decoder.parameters())

    def sgm_parameters(self):
        return list(self.score.parameters())

    def config_dict(self):
        return {"encoder": self.enc_cfg.to_dict(), "decoder": self.dec_cfg.to_dict(), "score": self.score_cfg.to_dict()}

    @classmethod
    def from_config_dict(cls, d, seed=0):
        return cls(EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]), ScoreNetConfig(**d["score"]), seed)


def param_hash(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class StepDraws:
    """All random numbers consumed by one training step."""

    enc_noise: torch.Tensor | None
    reparam: torch.Tensor
    t: np.ndarray
    weight: np.ndarray
    eps: torch.Tensor


def draw_step(batch: GraphBatch, bundle: ModelBundle, sde_cfg, rng: np.random.Generator, time_sampling="importance"):
    dtype = batch.x.dtype
    b, n = batch.mask.shape
    d = bundle.enc_cfg.latent_dim
    m = batch.mask[..., None].to(dtype)
    enc_noise = bundle.encoder.draw_noise(batch, rng) if bundle.enc_cfg.noise_dim else None
    reparam = torch.from_numpy(rng.standard_normal((b, n, d))).to(dtype) * m
    t, w = sde.sample_time(sde_cfg, rng, time_sampling, size=b)
    eps = torch.from_numpy(rng.standard_normal((b, n, d))).to(dtype) * m
    return StepDraws(enc_noise, reparam, np.atleast_1d(t), np.atleast_1d(w), eps)


def score_residual(score_net, z0n, mask, sde_cfg, t, eps):
    """Per-graph ||eps - eps_theta(Z^t, t)||^2 with Z^t drawn from the forward kernel."""
    fmask = mask.to(z0n.dtype)[..., None]
    scale, sigma = sde.marginal_params(sde_cfg, t)
    scale = torch.as_tensor(np.asarray(scale), dtype=z0n.dtype)[:, None, None]
    sigma = torch.as_tensor(np.asarray(sigma), dtype=z0n.dtype)[:, None, None]
    zt = (scale * z0n + sigma * eps) * fmask
    eps_hat, _ = score_net(zt, torch.as_tensor(t, dtype=z0n.dtype), mask)
    return ((eps - eps_hat) ** 2 * fmask).sum((1, 2))


def _check_finite(per_graph, what):
    bad = ~torch.isfinite(per_graph)
    if bad.any():
        idx = int(bad.nonzero()[0, 0])
        raise DivergenceError(f"non-finite {what} for graph {idx} of the batch")


def encode_batch(bundle: ModelBundle, batch: GraphBatch, draws: StepDraws):
    mean = bundle.encoder(batch.x, batch.a, batch.mask, draws.enc_noise)
    return mean, mean + bundle.enc_cfg.std * draws.reparam


def vae_loss(batch: GraphBatch, bundle: ModelBundle, sde_cfg, lam, rng=None, draws=None, time_sampling="importance",
             fixed_prior=False, update_stats=False):
    """Mean over graphs of -log p(A, X | Z0) + lam * w * g(t)^2 / 2 * ||eps - eps_theta||^2.

    Returns ``(loss, aux)`` where ``aux`` carries the detached normalised latents and the draws
    so the following score-model step can reuse the same t and eps.
    """
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    if draws is None:
        draws = draw_step(batch, bundle, sde_cfg, rng, time_sampling)
    mask = batch.mask.to(batch.x.dtype)
    mean, z0 = encode_batch(bundle, batch, draws)
    if update_stats:
        bundle.normalizer.update(z0.detach()[batch.mask])
    nll = -batch_log_likelihood(bundle.decoder(z0, batch.mask), batch)
    _check_finite(nll, "reconstruction loss")
    z0n = bundle.normalizer.normalize(z0) * mask[..., None]
    if fixed_prior:
        prior = 0.5 * (mean**2 * mask[..., None]).sum((1, 2))
    else:
        g2 = torch.as_tensor(np.asarray(sde.beta(sde_cfg, draws.t)), dtype=z0.dtype)
        w = torch.as_tensor(draws.weight, dtype=z0.dtype)
        prior = w * g2 / 2 * score_residual(bundle.score, z0n, batch.mask, sde_cfg, draws.t, draws.eps)
    per_graph = nll + lam * prior
    _check_finite(per_graph, "VAE loss")
    return per_graph.mean(), {"z0n": z0n.detach(), "draws": draws, "nll": nll.detach()}


def sgm_loss(batch: GraphBatch, bundle: ModelBundle, sde_cfg, rng=None, draws=None, z0n=None, time_sampling="importance"):
    """Mean over graphs of w * g(t) / 2 * ||eps - eps_theta(Z^t, t)||^2 with Z0 held constant."""
    if draws is None:
        draws = draw_step(batch, bundle, sde_cfg, rng, time_sampling)
    mask = batch.mask.to(batch.x.dtype)
    if z0n is None:
        with torch.no_grad():
            _, z0 = encode_batch(bundle, batch, draws)
            z0n = bundle.normalizer.normalize(z0) * mask[..., None]
    g = torch.as_tensor(np.asarray(sde.diffusion_coeff(sde_cfg, draws.t)), dtype=z0n.dtype)
    w = torch.as_tensor(draws.weight, dtype=z0n.dtype)
    per_graph = w * g / 2 * score_residual(bundle.score, z0n.detach(), batch.mask, sde_cfg, draws.t, draws.eps)
    _check_finite(per_graph, "score-model loss")
    return per_graph.mean()


def finetune_loss(batch: GraphBatch, bundle: ModelBundle, noise_std, rng: np.random.Generator):
    """-log p(A, X | Z + eps~) with Z from the frozen encoder and eps~ ~ N(0, noise_std^2)."""
    draws = draw_step(batch, bundle, sde.VpsdeConfig(), rng, "uniform")
    with torch.no_grad():
        _, z = encode_batch(bundle, batch, draws)
    extra = torch.from_numpy(rng.standard_normal(tuple(z.shape))).to(z.dtype) * batch.mask[..., None]
    nll = -batch_log_likelihood(bundle.decoder(z + noise_std * extra, batch.mask), batch)
    _check_finite(nll, "finetune loss")
    return nll.mean()


def _clip(params, max_norm):
    grads = [p for p in params if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.nn.utils.clip_grad_norm_(grads, max_norm))


def finetune_step(batch, bundle, optimizer, noise_std, rng, clip=1.0):
    optimizer.zero_grad(set_to_none=True)
    loss = finetune_loss(batch, bundle, noise_std, rng)
    params = list(bundle.decoder.parameters())
    loss.backward(inputs=params)
    _clip(params, clip)
    optimizer.step()
    return float(loss.detach())


# ----------------------------------------------------------------------------- checkpoints

_MAGIC = b"NVDCKPT\x00"
_VERSION = 1
_DTYPES = {torch.float32: 0, torch.float64: 1, torch.int64: 2, torch.bool: 3, torch.int32: 4, torch.float16: 5}
_DTYPES_INV = {v: k for k, v in _DTYPES.items()}


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _tensor_bytes(t: torch.Tensor) -> bytes:
    if t.dtype == torch.bool:
        return t.to(torch.uint8).numpy().tobytes()
    arr = t.detach().cpu().contiguous().numpy()
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def save_checkpoint(path, ckpt: Checkpoint):
    """Write ``path`` (tensor container) and ``path + '.json'`` (metadata sidecar)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [_MAGIC, struct.pack("<BI", _VERSION, len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        t = ckpt.tensors[name]
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for tensor {name}")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _DTYPES[t.dtype], t.dim()) + struct.pack(f"<{t.dim()}Q", *t.shape))
        data = _tensor_bytes(t)
        parts.append(struct.pack("<Q", len(data)) + data)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    Path(str(path) + ".json").write_text(json.dumps(ckpt.meta, sort_keys=True, indent=1))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
        meta = json.loads(Path(str(path) + ".json").read_text())
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if buf[:8] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, count = struct.unpack_from("<BI", buf, 8)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off, tensors = 13, {}
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", buf, off)
            name = buf[off + 2 : off + 2 + ln].decode()
            off += 2 + ln
            code, ndim = struct.unpack_from("<BB", buf, off)
            shape = struct.unpack_from(f"<{ndim}Q", buf, off + 2)
            off += 2 + 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", buf, off)
            off += 8
            dtype = _DTYPES_INV[code]
            if dtype == torch.bool:
                arr = np.frombuffer(buf, np.uint8, count=nbytes, offset=off).astype(bool)
            else:
                np_dtype = torch.empty((), dtype=dtype).numpy().dtype.newbyteorder("<")
                arr = np.frombuffer(buf, np_dtype, count=nbytes // np_dtype.itemsize, offset=off)
            tensors[name] = torch.from_numpy(arr.reshape(shape).copy())
            off += nbytes
    except (struct.error, KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt tensor record at offset {off}") from e
    return Checkpoint(tensors, meta)


def _optimizer_to_ckpt(opt, prefix, tensors):
    sd = opt.state_dict()
    for pid, st in sd["state"].items():
        for k, v in st.items():
            tensors[f"{prefix}/{pid}/{k}"] = v.clone() if torch.is_tensor(v) else torch.tensor(v)
    return [{k: v for k, v in g.items() if k != "params"} | {"params": g["params"]} for g in sd["param_groups"]]


def _optimizer_from_ckpt(opt, prefix, tensors, groups):
    state = {}
    for name, v in tensors.items():
        if name.startswith(prefix + "/"):
            _, pid, key = name.split("/")
            state.setdefault(int(pid), {})[key] = v.clone()
    opt.load_state_dict({"state": state, "param_groups": groups})


# ----------------------------------------------------------------------------- trainer


class Trainer:
    """Runs the alternating schedule: per batch one VAE step then one score-model step."""

    def __init__(self, bundle: ModelBundle, corpus: Sequence[GraphSample], cfg: TrainConfig, sde_cfg=None,
                 run_dir=None, verify_alternation=False, extra_meta=None):
        if not corpus:
            raise ValueError("training corpus is empty")
        self.bundle, self.corpus, self.cfg = bundle, list(corpus), cfg
        self.sde_cfg = sde_cfg or sde.VpsdeConfig()
        self.run_dir = Path(run_dir) if run_dir else None
        self.verify_alternation = verify_alternation
        self.alternation_violations = 0
        self.extra_meta = extra_meta or {}
        self.rng = np.random.default_rng(cfg.seed)
        self.opt_vae = torch.optim.Adam(bundle.vae_parameters(), lr=cfg.lr_vae, betas=(0.9, 0.999), eps=1e-8,
                                        weight_decay=cfg.weight_decay)
        self.opt_sgm = torch.optim.Adam(bundle.sgm_parameters(), lr=cfg.lr_sgm, betas=(0.9, 0.999), eps=1e-8,
                                        weight_decay=cfg.weight_decay)
        self.opt_ft = torch.optim.Adam(bundle.decoder.parameters(), lr=cfg.lr_vae, weight_decay=cfg.weight_decay)
        self.step_count = 0
        self.epoch = 0
        self.order: list[int] = []
        self.pos = 0
        self.phase = "main"
        self.history: list[dict] = []
        self._metrics_file = None

    # -- data order
    def _next_batch(self):
        if self.pos == 0 or not self.order:
            self.order = [int(i) for i in self.rng.permutation(len(self.corpus))]
        idx = self.order[self.pos : self.pos + self.cfg.batch_size]
        self.pos += len(idx)
        if self.pos >= len(self.corpus):
            self.pos = 0
            self.epoch += 1
        return collate([self.corpus[i] for i in idx], next(self.bundle.parameters()).dtype)

    def total_steps(self):
        per_epoch = -(-len(self.corpus) // self.cfg.batch_size)
        total = self.cfg.epochs * per_epoch
        return min(total, self.cfg.max_steps) if self.cfg.max_steps is not None else total

    def _set_lr(self):
        if self.cfg.lr_schedule != "cosine":
            return
        frac = 0.5 * (1 + np.cos(np.pi * min(self.step_count / max(self.total_steps(), 1), 1.0)))
        for opt, base in ((self.opt_vae, self.cfg.lr_vae), (self.opt_sgm, self.cfg.lr_sgm)):
            for group in opt.param_groups:
                group["lr"] = base * frac

    # -- one alternating step
    def train_step(self):
        self._set_lr()
        epoch = self.epoch
        lam = kl_schedule(self.cfg, epoch)
        fixed = self.cfg.fixed_prior_pretrain and epoch < self.cfg.kl_warmup_fraction * self.cfg.epochs
        batch = self._next_batch()
        b = self.bundle
        vae_params, sgm_params = b.vae_parameters(), b.sgm_parameters()

        h_theta = param_hash(sgm_params) if self.verify_alternation else None
        self.opt_vae.zero_grad(set_to_none=True)
        loss_v, aux = vae_loss(batch, b, self.sde_cfg, lam, self.rng, time_sampling=self.cfg.time_sampling,
                               fixed_prior=fixed, update_stats=True)
        loss_v.backward(inputs=vae_params)
        gn_v = _clip(vae_params, self.cfg.grad_clip_norm)
        self.opt_vae.step()
        if self.verify_alternation:
            h_phi = param_hash(vae_params)
            if param_hash(sgm_params) != h_theta:
                self.alternation_violations += 1

        self.opt_sgm.zero_grad(set_to_none=True)
        loss_s = sgm_loss(batch, b, self.sde_cfg, draws=aux["draws"], z0n=aux["z0n"])
        loss_s.backward(inputs=sgm_params)
        gn_s = _clip(sgm_params, self.cfg.grad_clip_norm)
        self.opt_sgm.step()
        if self.verify_alternation and param_hash(vae_params) != h_phi:
            self.alternation_violations += 1

        self.step_count += 1
        row = {"step": self.step_count, "loss_vae": float(loss_v.detach()), "loss_sgm": float(loss_s.detach()), "lambda": lam,
               "grad_norm": float(np.hypot(gn_v, gn_s))}
        self.history.append(row)
        self._log_row(row)
        return row

    def _log_row(self, row):
        if self.run_dir is None:
            return
        path = self.run_dir / "metrics.csv"
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["step", "loss_vae", "loss_sgm", "lambda", "grad_norm"])
            if new:
                w.writeheader()
            w.writerow(row)

    def finetune_epoch(self):
        std = float(np.sqrt(self.cfg.finetune_noise_var))
        losses = []
        order = self.rng.permutation(len(self.corpus))
        dtype = next(self.bundle.parameters()).dtype
        for s in range(0, len(order), self.cfg.batch_size):
            batch = collate([self.corpus[i] for i in order[s : s + self.cfg.batch_size]], dtype)
            losses.append(finetune_step(batch, self.bundle, self.opt_ft, std, self.rng, self.cfg.grad_clip_norm))
        return float(np.mean(losses))

    def done(self):
        if self.cfg.max_steps is not None and self.step_count >= self.cfg.max_steps:
            return True
        return self.epoch >= self.cfg.epochs

    def run(self):
        """Train to completion; on divergence the last periodic checkpoint is left untouched."""
        while not self.done():
            self.train_step()
            if self.run_dir and self.step_count % self.cfg.checkpoint_every == 0:
                self.save(self.run_dir / "checkpoint.bin")
        if self.cfg.finetune_epochs and self.phase == "main":
            self.phase = "finetune"
            for _ in range(self.cfg.finetune_epochs):
                self.finetune_epoch()
        if self.run_dir:
            self.save(self.run_dir / "checkpoint.bin")
        return self.checkpoint()

    # -- persistence
    def checkpoint(self) -> Checkpoint:
        tensors = {f"model/{k}": v.detach().clone() for k, v in self.bundle.state_dict().items()}
        groups = {name: _optimizer_to_ckpt(opt, name, tensors)
                  for name, opt in (("opt_vae", self.opt_vae), ("opt_sgm", self.opt_sgm), ("opt_ft", self.opt_ft))}
        meta = {
            "format": "nvdiff-checkpoint",
            "model": self.bundle.config_dict(),
            "train": self.cfg.to_dict(),
            "sde": asdict(self.sde_cfg),
            "size_histogram": size_histogram(self.corpus).as_dict(),
            "step": self.step_count,
            "epoch": self.epoch,
            "pos": self.pos,
            "order": self.order,
            "phase": self.phase,
            "rng_state": self.rng.bit_generator.state,
            "optimizers": groups,
            "normalizer": {"mean": self.bundle.normalizer.mean.tolist(), "std": self.bundle.normalizer.std.tolist()},
        }
        meta.update(self.extra_meta)
        return Checkpoint(tensors, meta)

    def save(self, path):
        save_checkpoint(path, self.checkpoint())

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, corpus, run_dir=None, **overrides):
        meta = ckpt.meta
        cfg = TrainConfig(**(meta["train"] | overrides))
        bundle = bundle_from_checkpoint(ckpt)
        tr = cls(bundle, corpus, cfg, sde.VpsdeConfig(**meta["sde"]), run_dir)
        for name in ("opt_vae", "opt_sgm", "opt_ft"):
            _optimizer_from_ckpt(getattr(tr, name), name, ckpt.tensors, meta["optimizers"][name])
        tr.step_count, tr.epoch, tr.pos = meta["step"], meta["epoch"], meta["pos"]
        tr.order, tr.phase = list(meta["order"]), meta["phase"]
        tr.rng.bit_generator.state = meta["rng_state"]
        return tr


def bundle_from_checkpoint(ckpt: Checkpoint) -> ModelBundle:
    bundle = ModelBundle.from_config_dict(ckpt.meta["model"])
    state = {k[len("model/"):]: v for k, v in ckpt.tensors.items() if k.startswith("model/")}
    bundle.load_state_dict(state)
    if not (bundle.normalizer.std > 0).all():
        raise CheckpointError("latent normalisation std must be positive")
    return bundle


def histogram_from_checkpoint(ckpt: Checkpoint) -> SizeHistogram:
    d = ckpt.meta["size_histogram"]
    return SizeHistogram.from_dict(d)


def train(corpus, bundle: ModelBundle, cfg: TrainConfig, sde_cfg=None, run_dir=None) -> Checkpoint:
    return Trainer(bundle, corpus, cfg, sde_cfg, run_dir).run()


@torch.no_grad()
def edge_accuracy(bundle: ModelBundle, graphs: Sequence[GraphSample], rng: np.random.Generator) -> float:
    """Fraction of node pairs whose edge existence is reconstructed by argmax decoding of the posterior mean."""
    dtype = next(bundle.parameters()).dtype
    batch = collate(graphs, dtype)
    noise = bundle.encoder.draw_noise(batch, rng) if bundle.enc_cfg.noise_dim else None
    mean = bundle.encoder(batch.x, batch.a, batch.mask, noise)
    noedge, _, _ = bundle.decoder(mean, batch.mask)
    pm = torch.tril(batch.mask[:, :, None] & batch.mask[:, None, :], -1)
    pred_edge = noedge < 0
    true_edge = batch.a[..., 0] < 0.5
    return float((pred_edge == true_edge)[pm].float().mean())
