"""Permutation-equivariant attention score network over latent node vectors."""

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn

from .layers import MLP, AttentionBlock, reset_parameters


@dataclass(frozen=True)
class ScoreNetConfig:
    num_layers: int = 3
    hidden_dim: int = 16
    num_heads: int = 2
    time_emb_dim: int = 16
    latent_dim: int = 4

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.time_emb_dim % 2:
            raise ValueError("time_emb_dim must be even")

    def to_dict(self):
        return asdict(self)


def time_embedding(t, dim):
    """Sinusoidal embedding: entry 2k is sin(t w_k), entry 2k+1 is cos(t w_k), w_k = 1000^(2k/dim)."""
    if dim % 2:
        raise ValueError(f"time embedding dim must be even, got {dim}")
    t = torch.as_tensor(t, dtype=torch.get_default_dtype()) if not torch.is_tensor(t) else t
    k = torch.arange(dim // 2, dtype=t.dtype, device=t.device)
    freqs = 1000.0 ** (2 * k / dim)
    angles = t[..., None] * freqs
    return torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1).flatten(-2)


class ScoreNetwork(nn.Module):
    """Predicts the noise eps_hat (N x d) for noisy latents and returns the contextual vector.

    The contextual vector is a learnable token prepended to the node sequence; every block
    updates it residually, so its final value summarises the whole set of node vectors.
    """

    def __init__(self, cfg: ScoreNetConfig, generator=None):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        self.mlp_in = MLP(cfg.latent_dim + cfg.time_emb_dim, h, h)
        self.blocks = nn.ModuleList(AttentionBlock(h, cfg.num_heads) for _ in range(cfg.num_layers))
        self.norm_out = nn.LayerNorm(h)
        self.mlp_out = MLP(h, h, cfg.latent_dim)
        self.context0 = nn.Parameter(torch.zeros(h))
        reset_parameters(self, generator)
        with torch.no_grad():
            self.context0.normal_(0.0, 0.02, generator=generator)

    def forward(self, z, t, mask=None):
        """z: (B, N, d) or (N, d); t: scalar or (B,); mask: (B, N) bool.

        Returns (eps_hat with the shape of z, context of shape (B, hidden) or (hidden,)).
        """
        single = z.dim() == 2
        if single:
            z = z[None]
        if z.dim() != 3 or z.shape[-1] != self.cfg.latent_dim:
            raise ValueError(f"expected (..., N, {self.cfg.latent_dim}) latents, got {tuple(z.shape)}")
        if not torch.isfinite(z).all():
            raise ValueError("score network received non-finite latents")
        b, n, _ = z.shape
        t = torch.as_tensor(t, dtype=z.dtype, device=z.device).reshape(-1).expand(b)
        if mask is None:
            mask = torch.ones(b, n, dtype=torch.bool, device=z.device)
        temb = time_embedding(t, self.cfg.time_emb_dim)[:, None, :].expand(b, n, -1)
        h = self.mlp_in(torch.cat([z, temb], dim=-1))
        seq = torch.cat([self.context0.expand(b, 1, -1), h], dim=1)
        key_mask = torch.cat([torch.ones(b, 1, dtype=torch.bool, device=z.device), mask], dim=1)
        for block in self.blocks:
            seq = block(seq, key_mask)
        context, h = seq[:, 0], seq[:, 1:]
        eps = self.mlp_out(self.norm_out(h)) * mask[..., None]
        if single:
            return eps[0], context[0]
        return eps, context


def score_forward(net: ScoreNetwork, z_t, t, mask=None):
    return net(z_t, t, mask)
