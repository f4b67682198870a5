"""Per-reverse-step wall clock of the latent sampler versus the edge-diffusing variant."""

from __future__ import annotations

import time

import numpy as np
import torch

from . import sde
from .nvdiff_e import EnaScoreNetwork
from .sampling import reverse_sde_step
from .sde import DiffusionState, VpsdeConfig
from .score_net import ScoreNetwork


def _median_time(fn, reps, warmup=2):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def step_time_nvdiff(net: ScoreNetwork, n, reps=10, sde_cfg=None, seed=0):
    """Seconds for one reverse step (score evaluation plus update) on an N x d latent matrix."""
    sde_cfg = sde_cfg or VpsdeConfig()
    rng = np.random.default_rng(seed)
    d = net.cfg.latent_dim
    z = rng.standard_normal((n, d))
    noise = rng.standard_normal((n, d))
    _, sigma = sde.marginal_params(sde_cfg, 0.5)

    def step():
        with torch.no_grad():
            eps, _ = net(torch.as_tensor(z, dtype=torch.float32), 0.5)
        reverse_sde_step(DiffusionState(z, 0.5), -eps.double().numpy() / sigma, sde_cfg, 1e-3, noise)

    return _median_time(step, reps)


def step_time_nvdiffe(net: EnaScoreNetwork, n, reps=3, sde_cfg=None, seed=0):
    """Seconds for one reverse step in the joint N x N x (Ke+1) and N x Kv space."""
    sde_cfg = sde_cfg or VpsdeConfig()
    rng = np.random.default_rng(seed)
    ke1, kv = net.cfg.num_edge_types + 1, net.cfg.num_node_types
    a = rng.standard_normal((n, n, ke1))
    a = (a + a.transpose(1, 0, 2)) / np.sqrt(2)
    x = rng.standard_normal((n, kv))
    na, nx_ = rng.standard_normal(a.shape), rng.standard_normal(x.shape)
    _, sigma = sde.marginal_params(sde_cfg, 0.5)

    def step():
        with torch.no_grad():
            eps_e, eps_v, _ = net(torch.as_tensor(a, dtype=torch.float32)[None],
                                  torch.as_tensor(x, dtype=torch.float32)[None], 0.5)
        reverse_sde_step(DiffusionState(a, 0.5), -eps_e[0].double().numpy() / sigma, sde_cfg, 1e-3, na)
        reverse_sde_step(DiffusionState(x, 0.5), -eps_v[0].double().numpy() / sigma, sde_cfg, 1e-3, nx_)

    return _median_time(step, reps)


def loglog_slope(sizes, seconds) -> float:
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(seconds, float)), 1)[0])


def bench_speed(nv: ScoreNetwork, nve: EnaScoreNetwork, sizes=(50, 100, 200, 400), reps_nv=20, reps_nve=3):
    """Rows (N, seconds_nvdiff, seconds_nvdiffe) and the fitted log-log slopes."""
    rows = [(n, step_time_nvdiff(nv, n, reps_nv), step_time_nvdiffe(nve, n, reps_nve)) for n in sizes]
    slopes = (loglog_slope(sizes, [r[1] for r in rows]), loglog_slope(sizes, [r[2] for r in rows]))
    return rows, slopes
