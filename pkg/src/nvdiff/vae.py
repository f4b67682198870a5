"""Graph encoder q(Z | A, X) and pairwise-difference decoder p(A, X | Z)."""

from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .batching import GraphBatch, collate
from .graphs import GraphSample
from .layers import MLP, neighbour_mean, pair_mask, reset_parameters


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 3
    hidden_dim: int = 32
    latent_dim: int = 4
    noise_dim: int = 8
    fixed_var: float = 0.01
    num_node_types: int = 1
    num_edge_types: int = 1

    def __post_init__(self):
        if self.fixed_var <= 0:
            raise ValueError("encoder variance must be positive")
        if self.noise_dim < 0:
            raise ValueError("noise_dim must be non-negative")

    @property
    def std(self) -> float:
        return float(np.sqrt(self.fixed_var))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 1
    hidden_dim: int = 32
    latent_dim: int = 4
    num_node_types: int = 1
    num_edge_types: int = 1

    def to_dict(self):
        return asdict(self)


class Encoder(nn.Module):
    """Message passing over the complete graph, with non-edges as an extra edge type.

    Node inputs are the one-hot types concatenated with Gaussian noise that breaks
    symmetries between structurally identical nodes. Layer updates:
        m_ij = mlp_e([a_ij ; W m_i + W m_j])
        m_i <- m_i + mlp_v([m_i ; mean_{j != i} m_ij])
    """

    def __init__(self, cfg: EncoderConfig, generator=None):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        self.proj_in = nn.Linear(cfg.num_node_types + cfg.noise_dim, h)
        self.w = nn.Linear(h, h, bias=False)
        self.mlp_e = nn.ModuleList(MLP(cfg.num_edge_types + 1 + h, h, h) for _ in range(cfg.num_layers))
        self.mlp_v = nn.ModuleList(MLP(2 * h, h, h) for _ in range(cfg.num_layers))
        self.proj_out = nn.Linear(h, cfg.latent_dim)
        reset_parameters(self, generator)

    def forward(self, x, a, mask, noise=None):
        b, n, _ = x.shape
        if noise is None:
            noise = x.new_zeros(b, n, self.cfg.noise_dim)
        m = self.proj_in(torch.cat([x, noise], dim=-1))
        pm = pair_mask(mask)[..., None].to(x.dtype)
        for mlp_e, mlp_v in zip(self.mlp_e, self.mlp_v):
            wm = self.w(m)
            msg = mlp_e(torch.cat([a, wm[:, :, None, :] + wm[:, None, :, :]], dim=-1))
            m = m + mlp_v(torch.cat([m, neighbour_mean(msg, pm)], dim=-1))
        return self.proj_out(m) * mask[..., None]

    def draw_noise(self, batch: GraphBatch, rng: np.random.Generator):
        shape = (len(batch), batch.mask.shape[1], self.cfg.noise_dim)
        return torch.from_numpy(rng.standard_normal(shape)).to(batch.x.dtype)


def pair_features(z):
    """Element-wise squared differences (z_i - z_j)^2 for every node pair: (.., N, N, d)."""
    if not torch.is_tensor(z):
        z = torch.as_tensor(np.asarray(z, dtype=np.float64))
    if not torch.isfinite(z).all():
        raise ValueError("pair_features received non-finite latents")
    return (z[..., :, None, :] - z[..., None, :, :]) ** 2


class Decoder(nn.Module):
    """GNN over the complete graph started from (Z, pairwise squared differences).

        r_ij <- mlp_e([W_e s_i + W_e s_j ; r_ij])
        s_i  <- mlp_v([mean_{j != i} W_v r_ij ; s_i])

    Heads give a non-edge logit per pair, edge-type logits per pair and node-type logits.
    """

    def __init__(self, cfg: DecoderConfig, generator=None):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        self.w_e = nn.ModuleList()
        self.w_v = nn.ModuleList()
        self.mlp_e = nn.ModuleList()
        self.mlp_v = nn.ModuleList()
        dim = cfg.latent_dim
        for _ in range(cfg.num_layers):
            self.w_e.append(nn.Linear(dim, h, bias=False))
            self.mlp_e.append(MLP(h + dim, h, h))
            self.w_v.append(nn.Linear(h, h, bias=False))
            self.mlp_v.append(MLP(h + dim, h, h))
            dim = h
        self.head_noedge = MLP(dim, h, 1)
        self.head_edge = MLP(dim, h, cfg.num_edge_types)
        self.head_node = MLP(dim, h, cfg.num_node_types)
        reset_parameters(self, generator)

    def forward(self, z, mask=None):
        """Return logits (noedge (B,N,N), edge types (B,N,N,Ke), node types (B,N,Kv))."""
        if not torch.isfinite(z).all():
            raise ValueError("decoder received non-finite latents")
        b, n, _ = z.shape
        if mask is None:
            mask = torch.ones(b, n, dtype=torch.bool, device=z.device)
        pm = pair_mask(mask)[..., None].to(z.dtype)
        s, r = z, pair_features(z)
        for w_e, mlp_e, w_v, mlp_v in zip(self.w_e, self.mlp_e, self.w_v, self.mlp_v):
            ws = w_e(s)
            r = mlp_e(torch.cat([ws[:, :, None, :] + ws[:, None, :, :], r], dim=-1))
            s = mlp_v(torch.cat([neighbour_mean(w_v(r), pm), s], dim=-1))
        noedge = self.head_noedge(r)[..., 0]
        edge = self.head_edge(r)
        # logits of (i, j) and (j, i) are averaged so sampled adjacencies stay symmetric
        noedge = 0.5 * (noedge + noedge.transpose(1, 2))
        edge = 0.5 * (edge + edge.transpose(1, 2))
        return noedge, edge, self.head_node(s)


def batch_log_likelihood(logits, batch: GraphBatch):
    """Per-graph log p(A, X | Z) over the lower triangle; edge-type terms only where an edge exists."""
    noedge, edge, node = logits
    a, x = batch.a, batch.x
    pm = pair_mask(batch.mask).to(a.dtype).tril(-1)
    exists = 1.0 - a[..., 0]
    ll_exist = (1.0 - exists) * F.logsigmoid(noedge) + exists * F.logsigmoid(-noedge)
    ll_type = (a[..., 1:] * F.log_softmax(edge, dim=-1)).sum(-1)
    ll_pairs = (pm * (ll_exist + exists * ll_type)).sum((1, 2))
    ll_nodes = ((x * F.log_softmax(node, dim=-1)).sum(-1) * batch.mask).sum(1)
    return ll_pairs + ll_nodes


def _probs(logits):
    noedge, edge, node = logits
    return torch.sigmoid(noedge), torch.softmax(edge, dim=-1), torch.softmax(node, dim=-1)


def decode_distributions(decoder: Decoder, z):
    """Decoder probabilities for one latent matrix z (N, d)."""
    z = torch.as_tensor(z, dtype=next(decoder.parameters()).dtype)
    if not torch.isfinite(z).all():
        raise ValueError("decoder received non-finite latents")
    with torch.no_grad():
        p_noedge, p_edge, p_node = _probs(decoder(z[None]))
    return {"p_noedge": p_noedge[0].numpy(), "p_edgetype": p_edge[0].numpy(), "p_nodetype": p_node[0].numpy()}


def log_likelihood_from_probs(dists, g: GraphSample) -> float:
    """Same factorisation as ``batch_log_likelihood`` evaluated on explicit probabilities."""
    n = g.num_nodes
    with np.errstate(divide="ignore"):
        total = float(np.log(dists["p_nodetype"][np.arange(n), g.node_types]).sum())
        et = g.edge_types
        for i in range(n):
            for j in range(i):
                p0 = dists["p_noedge"][i, j]
                if et[i, j] == 0:
                    total += np.log(p0)
                else:
                    total += np.log1p(-p0) + np.log(dists["p_edgetype"][i, j, et[i, j] - 1])
    return float(total)


def log_likelihood(decoder: Decoder, g: GraphSample, z) -> float:
    dtype = next(decoder.parameters()).dtype
    z = torch.as_tensor(z, dtype=dtype)
    if z.shape[0] != g.num_nodes:
        raise ValueError(f"latent has {z.shape[0]} rows but graph has {g.num_nodes} nodes")
    batch = collate([g], dtype)
    with torch.no_grad():
        return float(batch_log_likelihood(decoder(z[None], batch.mask), batch)[0])


def encode(encoder: Encoder, g: GraphSample, rng: np.random.Generator | None = None):
    """Posterior mean (N, d) and the fixed posterior std for one graph."""
    if g.num_nodes == 0:
        raise ValueError("cannot encode an empty graph")
    dtype = next(encoder.parameters()).dtype
    batch = collate([g], dtype)
    noise = encoder.draw_noise(batch, rng) if (rng is not None and encoder.cfg.noise_dim) else None
    with torch.no_grad():
        mean = encoder(batch.x, batch.a, batch.mask, noise)[0]
    return mean, encoder.cfg.std


def reparameterize(mean, std, noise):
    if tuple(mean.shape) != tuple(noise.shape):
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match mean shape {tuple(mean.shape)}")
    return mean + std * noise


def graph_from_probs(dists, mode="argmax", rng: np.random.Generator | None = None) -> GraphSample:
    p_noedge, p_edge, p_node = dists["p_noedge"], dists["p_edgetype"], dists["p_nodetype"]
    n, kv = p_node.shape
    ke = p_edge.shape[-1]
    lower = np.tril(np.ones((n, n), dtype=bool), -1)
    if mode == "argmax":
        exists = (1.0 - p_noedge) > 0.5
        etype = p_edge.argmax(-1) + 1
        ntype = p_node.argmax(-1)
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        exists = rng.random((n, n)) < (1.0 - p_noedge)
        etype = _sample_categorical(p_edge, rng) + 1
        ntype = _sample_categorical(p_node, rng)
    else:
        raise ValueError(f"unknown decoding mode {mode!r}")
    et = np.where(exists & lower, etype, 0)
    et = et + et.T
    return GraphSample.from_types(ntype, et, kv, ke)


def _sample_categorical(p, rng):
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[:-1] + (1,)) * cdf[..., -1:]
    return np.minimum((u > cdf).sum(-1), p.shape[-1] - 1)


def sample_graph(decoder: Decoder, z, mode="argmax", rng=None) -> GraphSample:
    return graph_from_probs(decode_distributions(decoder, z), mode, rng)
