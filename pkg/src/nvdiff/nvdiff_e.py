"""Variant that diffuses the adjacency and node tensors directly with edge-node attention blocks."""

from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from .graphs import GraphSample
from .layers import MLP, AttentionBlock, neighbour_mean, pair_mask, reset_parameters
from .score_net import time_embedding
from . import sde


@dataclass(frozen=True)
class EnaConfig:
    num_layers: int = 3
    hidden_dim: int = 16
    num_heads: int = 2
    time_emb_dim: int = 16
    num_node_types: int = 1
    num_edge_types: int = 1

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")

    def to_dict(self):
        return asdict(self)


class EnaBlock(nn.Module):
    """One edge-node attention block.

    Attention runs over [g; H^v], edge states are aggregated into the nodes, and every
    edge state is rebuilt from its two fresh endpoint states plus its previous value.
    """

    def __init__(self, hidden, heads):
        super().__init__()
        self.attn = AttentionBlock(hidden, heads)
        self.w_v = nn.Linear(hidden, hidden, bias=False)
        self.w_e = nn.Linear(hidden, hidden, bias=False)
        self.mlp_e = MLP(2 * hidden, hidden, hidden)

    def forward(self, seq, he, key_mask, pm):
        seq = self.attn(seq, key_mask)
        g, hv = seq[:, :1], seq[:, 1:]
        hv = hv + neighbour_mean(self.w_v(he), pm)
        wh = self.w_e(hv)
        he = self.mlp_e(torch.cat([wh[:, :, None, :] + wh[:, None, :, :], he], dim=-1))
        he = 0.5 * (he + he.transpose(1, 2)) * pm
        return torch.cat([g, hv], dim=1), he


class EnaScoreNetwork(nn.Module):
    def __init__(self, cfg: EnaConfig, generator=None):
        super().__init__()
        self.cfg = cfg
        h, te = cfg.hidden_dim, cfg.time_emb_dim
        self.mlp_in_e = MLP(cfg.num_edge_types + 1 + te, h, h)
        self.mlp_in_v = MLP(cfg.num_node_types + te, h, h)
        self.blocks = nn.ModuleList(EnaBlock(h, cfg.num_heads) for _ in range(cfg.num_layers))
        self.mlp_out_e = MLP(h, h, cfg.num_edge_types + 1)
        self.mlp_out_v = MLP(h, h, cfg.num_node_types)
        self.context0 = nn.Parameter(torch.zeros(h))
        reset_parameters(self, generator)
        with torch.no_grad():
            self.context0.normal_(0.0, 0.02, generator=generator)
        self.last_edge_state_numel = 0

    def forward(self, a_t, x_t, t, mask=None):
        """a_t: (B, N, N, Ke+1), x_t: (B, N, Kv). Returns (eps_edge, eps_node, context)."""
        if not torch.allclose(a_t, a_t.transpose(1, 2), atol=1e-6, rtol=0):
            raise ValueError("edge input must be symmetric in its first two node indices")
        b, n, _ = x_t.shape
        if mask is None:
            mask = torch.ones(b, n, dtype=torch.bool, device=x_t.device)
        t = torch.as_tensor(t, dtype=x_t.dtype).reshape(-1).expand(b)
        temb = time_embedding(t, self.cfg.time_emb_dim)
        pm = pair_mask(mask)[..., None].to(x_t.dtype)
        he = self.mlp_in_e(torch.cat([a_t, temb[:, None, None, :].expand(b, n, n, -1)], dim=-1)) * pm
        hv = self.mlp_in_v(torch.cat([x_t, temb[:, None, :].expand(b, n, -1)], dim=-1))
        seq = torch.cat([self.context0.expand(b, 1, -1), hv], dim=1)
        key_mask = torch.cat([torch.ones(b, 1, dtype=torch.bool), mask], dim=1)
        for block in self.blocks:
            seq, he = block(seq, he, key_mask, pm)
        self.last_edge_state_numel = he.numel()
        eps_e = self.mlp_out_e(he)
        eps_e = 0.5 * (eps_e + eps_e.transpose(1, 2))
        eps_v = self.mlp_out_v(seq[:, 1:]) * mask[..., None]
        return eps_e, eps_v, seq[:, 0]


def ena_score_forward(net: EnaScoreNetwork, a_t, x_t, t):
    """Single-graph convenience wrapper: a_t (N, N, Ke+1), x_t (N, Kv)."""
    eps_e, eps_v, _ = net(a_t[None], x_t[None], t)
    return eps_e[0], eps_v[0]


def discretize(a0, x0) -> GraphSample:
    """Symmetrise, take per-slice argmax and force the diagonal to the non-edge channel."""
    a0 = np.asarray(a0, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    a0 = 0.5 * (a0 + a0.transpose(1, 0, 2))
    et = a0.argmax(-1)
    np.fill_diagonal(et, 0)
    return GraphSample.from_types(x0.argmax(-1), et, x0.shape[-1], a0.shape[-1] - 1)


def sample_nvdiffe(net: EnaScoreNetwork, sde_cfg, n: int, rng: np.random.Generator, num_steps=1000, noise=True):
    """Euler-Maruyama reverse integration in the joint (A, X) space followed by argmax decoding."""
    if n < 1:
        raise ValueError("graph size must be positive")
    dtype = next(net.parameters()).dtype
    ke1, kv = net.cfg.num_edge_types + 1, net.cfg.num_node_types

    def sym_normal():
        m = rng.standard_normal((n, n, ke1))
        return (m + m.transpose(1, 0, 2)) / np.sqrt(2.0)

    a = sym_normal()
    x = rng.standard_normal((n, kv))
    ts = np.linspace(1.0, sde_cfg.eps_t, num_steps + 1)
    with torch.no_grad():
        for t0, t1 in zip(ts[:-1], ts[1:]):
            dt = t0 - t1
            _, sigma = sde.marginal_params(sde_cfg, t0)
            eps_e, eps_v = ena_score_forward(net, torch.as_tensor(a, dtype=dtype), torch.as_tensor(x, dtype=dtype), t0)
            f, g = sde.drift_coeff(sde_cfg, t0), sde.diffusion_coeff(sde_cfg, t0)
            for state, eps, draw in ((a, eps_e, sym_normal), (x, eps_v, lambda: rng.standard_normal((n, kv)))):
                score = -eps.double().numpy() / sigma
                z = draw() if noise else 0.0
                state -= (f * state - g * g * score) * dt
                state += g * np.sqrt(dt) * z
            if not (np.isfinite(a).all() and np.isfinite(x).all()):
                raise FloatingPointError(f"reverse integration diverged at t={t1:.4f}")
    return discretize(a, x)
