"""Reverse-time generation over latent node vectors and importance-sampled likelihoods."""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from scipy.integrate import solve_ivp
from scipy.special import logsumexp

from . import sde
from .batching import collate
from .graphs import GraphSample, SizeHistogram
from .sde import DiffusionState, VpsdeConfig
from .training import DivergenceError, ModelBundle
from .vae import batch_log_likelihood, graph_from_probs

KINDS = ("euler_maruyama", "probability_flow_ode")


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "probability_flow_ode"
    num_steps: int = 1000
    atol: float = 1e-4
    rtol: float = 1e-4
    t_end: float | None = None  # defaults to the SDE cutoff eps_t

    def validate(self) -> list[str]:
        errs = []
        if self.kind not in KINDS:
            errs.append(f"solver kind must be one of {KINDS}")
        if self.num_steps < 1:
            errs.append("num_steps must be >= 1")
        if self.atol <= 0 or self.rtol <= 0:
            errs.append("solver tolerances must be positive")
        if self.t_end is not None and not 0 <= self.t_end < 1:
            errs.append("t_end must lie in [0, 1)")
        return errs

    def __post_init__(self):
        errs = self.validate()
        if errs:
            raise ValueError("; ".join(errs))

    def to_dict(self):
        return asdict(self)


def reverse_sde_step(state: DiffusionState, score, sde_cfg: VpsdeConfig, dt, noise, f=None, g=None) -> DiffusionState:
    """One Euler-Maruyama step of the reverse-time SDE from ``state.time`` to ``state.time - dt``.

    ``f`` and ``g`` override the drift and diffusion coefficients (used to test null dynamics).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t = state.time
    if t - dt < -1e-12:
        raise ValueError(f"step of size {dt} from t={t} goes below zero")
    f = sde.drift_coeff(sde_cfg, t) if f is None else f
    g = sde.diffusion_coeff(sde_cfg, t) if g is None else g
    z = np.asarray(state.latent, dtype=np.float64)
    z = z - (f * z - g * g * np.asarray(score)) * dt + g * np.sqrt(dt) * np.asarray(noise)
    if not np.isfinite(z).all():
        raise DivergenceError(f"reverse SDE produced non-finite values at t={t - dt:.5f}")
    return DiffusionState(z, max(t - dt, 0.0))


def integrate_em(z1, score_fn: Callable, sde_cfg: VpsdeConfig, num_steps, rng=None, noise_fn=None, t_end=None,
                 record=None):
    """Uniform-grid Euler-Maruyama from t=1 down to ``t_end``.

    ``noise_fn(k)`` may supply the Gaussian increment for step k; otherwise ``rng`` is used.
    ``record`` is an optional sorted list of times; the state nearest each is returned too.
    """
    t_end = sde_cfg.eps_t if t_end is None else t_end
    ts = np.linspace(1.0, t_end, num_steps + 1)
    state = DiffusionState(np.asarray(z1, dtype=np.float64), 1.0)
    snaps = {}
    targets = list(record or [])
    for k in range(num_steps):
        while targets and ts[k] <= targets[0] + 0.5 * (ts[0] - ts[1]):
            snaps[targets.pop(0)] = state.latent.copy()
        noise = noise_fn(k) if noise_fn is not None else rng.standard_normal(state.latent.shape)
        dt = ts[k] - ts[k + 1]
        state = reverse_sde_step(state, score_fn(state.latent, ts[k]), sde_cfg, dt, noise)
        state.time = ts[k + 1]
    for tr in targets:
        snaps[tr] = state.latent.copy()
    return (state, snaps) if record is not None else state


def solve_ode(z1, score_fn: Callable, sde_cfg: VpsdeConfig, solver: SolverConfig, t_eval=None):
    """Probability-flow ODE dZ = [f Z - g^2/2 score] dt integrated from t=1 to t_end with RK45."""
    z1 = np.asarray(z1, dtype=np.float64)
    shape = z1.shape
    t_end = sde_cfg.eps_t if solver.t_end is None else solver.t_end

    def rhs(t, y):
        z = y.reshape(shape)
        f, g = sde.drift_coeff(sde_cfg, t), sde.diffusion_coeff(sde_cfg, t)
        return (f * z - 0.5 * g * g * score_fn(z, t)).ravel()

    if t_eval is not None:
        # always include t_end so the last column is the endpoint
        t_eval = np.unique(np.clip(np.append(np.asarray(t_eval, dtype=np.float64), t_end), t_end, 1.0))[::-1]
    sol = solve_ivp(rhs, (1.0, t_end), z1.ravel(), method="RK45", rtol=solver.rtol, atol=solver.atol, t_eval=t_eval)
    if not sol.success or not np.isfinite(sol.y).all():
        raise DivergenceError(f"probability-flow ODE failed: {sol.message}")
    final = DiffusionState(sol.y[:, -1].reshape(shape), t_end)
    if t_eval is None:
        return final
    return final, {float(t): sol.y[:, k].reshape(shape).copy() for k, t in enumerate(sol.t)}


def latent_score_fn(bundle: ModelBundle, sde_cfg: VpsdeConfig):
    """Map a numpy batch (B, N, d) or (N, d) of normalised latents and a time to the score -eps/sigma."""
    dtype = next(bundle.parameters()).dtype

    def fn(z, t):
        _, sigma = sde.marginal_params(sde_cfg, t)
        with torch.no_grad():
            eps, _ = bundle.score(torch.as_tensor(z, dtype=dtype), float(t))
        return -eps.double().numpy() / sigma

    return fn


@dataclass
class Trajectory:
    sample_id: int
    times: list
    states: list  # de-normalised (N, d) arrays


def _integrate(z1, bundle, sde_cfg, solver, rng, t_grid=None):
    fn = latent_score_fn(bundle, sde_cfg)
    if solver.kind == "probability_flow_ode":
        if t_grid is None:
            return solve_ode(z1, fn, sde_cfg, solver).latent, None
        state, snaps = solve_ode(z1, fn, sde_cfg, solver, t_eval=t_grid)
        return state.latent, snaps
    if t_grid is None:
        return integrate_em(z1, fn, sde_cfg, solver.num_steps, rng, t_end=solver.t_end).latent, None
    state, snaps = integrate_em(z1, fn, sde_cfg, solver.num_steps, rng, t_end=solver.t_end,
                                record=sorted(t_grid, reverse=True))
    return state.latent, snaps


def decode_latents(bundle: ModelBundle, z, mode="argmax", rng=None):
    """Decode a batch (B, N, d) of raw latents into graphs."""
    dtype = next(bundle.parameters()).dtype
    with torch.no_grad():
        noedge, edge, node = bundle.decoder(torch.as_tensor(z, dtype=dtype))
        p0, pe, pv = torch.sigmoid(noedge), torch.softmax(edge, -1), torch.softmax(node, -1)
    return [graph_from_probs({"p_noedge": p0[b].double().numpy(), "p_edgetype": pe[b].double().numpy(),
                              "p_nodetype": pv[b].double().numpy()}, mode, rng) for b in range(z.shape[0])]


def sample_graphs(bundle: ModelBundle, sizes: SizeHistogram, count: int, solver: SolverConfig,
                  rng: np.random.Generator, sde_cfg: VpsdeConfig | None = None, mode="argmax", t_grid=None,
                  sizes_override=None):
    """Draw ``count`` graphs: sizes from the histogram, Z^1 ~ N(0, I), reverse integration, decoding.

    Samples of equal size are integrated together as one batch. Returns ``(graphs, trajectories)``;
    trajectories is empty unless ``t_grid`` is given.
    """
    if count < 1:
        raise ValueError("count must be positive")
    sde_cfg = sde_cfg or VpsdeConfig()
    d = bundle.enc_cfg.latent_dim
    ns = np.asarray(sizes_override if sizes_override is not None else sizes.sample(rng, size=count), dtype=int)
    z1 = [rng.standard_normal((int(n), d)) for n in ns]
    graphs: list = [None] * count
    trajectories: list = [None] * count
    for n in sorted(set(ns.tolist())):
        idx = np.nonzero(ns == n)[0]
        z0, snaps = _integrate(np.stack([z1[i] for i in idx]), bundle, sde_cfg, solver, rng, t_grid)
        raw = bundle.normalizer.denormalize(torch.as_tensor(z0, dtype=bundle.normalizer.std.dtype)).double().numpy()
        for i, g in zip(idx, decode_latents(bundle, raw, mode, rng)):
            graphs[i] = g
        if snaps is not None:
            times = sorted(snaps, reverse=True)
            for k, i in enumerate(idx):
                states = [bundle.normalizer.denormalize(torch.as_tensor(snaps[t][k], dtype=bundle.normalizer.std.dtype))
                          .double().numpy() for t in times]
                trajectories[i] = Trajectory(int(i), times, states)
    return graphs, [tr for tr in trajectories if tr is not None]


def write_trajectories(path, trajectories):
    """CSV rows of (sample_id, t, node_id, z_0 .. z_{d-1})."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        d = trajectories[0].states[0].shape[1] if trajectories else 0
        w.writerow(["sample_id", "t", "node_id"] + [f"z{k}" for k in range(d)])
        for tr in trajectories:
            for t, z in zip(tr.times, tr.states):
                for node, row in enumerate(z):
                    w.writerow([tr.sample_id, f"{t:.6g}", node] + [f"{v:.8g}" for v in row])


def nll_importance(bundle: ModelBundle, g: GraphSample, num_samples: int, rng: np.random.Generator,
                   prior_logpdf: Callable | None = None) -> float:
    """Negative log of the importance estimate (1/L) sum p(A, X | z_l) p(z_l) / q(z_l | A, X).

    The prior density defaults to a standard normal on the normalised latents plus the
    Jacobian of the normalisation.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    std = bundle.enc_cfg.std
    if std <= 0:
        raise ValueError("degenerate proposal: posterior std is zero")
    dtype = next(bundle.parameters()).dtype
    batch = collate([g] * num_samples, dtype)
    with torch.no_grad():
        noise = bundle.encoder.draw_noise(batch, rng) if bundle.enc_cfg.noise_dim else None
        mean = bundle.encoder(batch.x, batch.a, batch.mask, noise).double()
        eps = torch.from_numpy(rng.standard_normal(tuple(mean.shape)))
        z = mean + std * eps
        ll = batch_log_likelihood(bundle.decoder(z.to(dtype), batch.mask), batch).double()
    n, d = g.num_nodes, bundle.enc_cfg.latent_dim
    log_q = (-0.5 * eps**2).sum((1, 2)) - n * d * (np.log(std) + 0.5 * np.log(2 * np.pi))
    if prior_logpdf is None:
        nstd = bundle.normalizer.std.double()
        zn = (z - bundle.normalizer.mean.double()) / nstd
        log_p = (-0.5 * zn**2).sum((1, 2)) - n * 0.5 * d * np.log(2 * np.pi) - n * torch.log(nstd).sum()
    else:
        log_p = torch.as_tensor(np.array([prior_logpdf(zz.numpy()) for zz in z]))
    logw = (ll + log_p - log_q).numpy()
    est = logsumexp(logw) - np.log(num_samples)
    if not np.isfinite(est):
        raise DivergenceError("importance estimate is not finite")
    return float(-est)
