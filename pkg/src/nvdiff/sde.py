"""Variance-preserving SDE with a linear beta schedule.

All kernel quantities are computed in float64. Functions accept python floats or
numpy arrays for ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_IMPORTANCE_GRID = 1000


@dataclass(frozen=True)
class VpsdeConfig:
    beta0: float = 0.1
    beta1: float = 20.0
    eps_t: float = 0.01
    sigma0: float = 0.0

    def __post_init__(self):
        if not 0 < self.beta0 <= self.beta1:
            raise ValueError("need 0 < beta0 <= beta1")
        if not 0 <= self.eps_t < 1:
            raise ValueError("eps_t must lie in [0, 1)")
        if not 0 <= self.sigma0 < 1:
            raise ValueError("sigma0 must lie in [0, 1)")


@dataclass
class DiffusionState:
    latent: np.ndarray
    time: float

    def __post_init__(self):
        if not 0.0 <= self.time <= 1.0:
            raise ValueError(f"time {self.time} outside [0, 1]")


def _check_t(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0) or np.any(~np.isfinite(t)):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return t


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def beta(cfg: VpsdeConfig, t):
    t = _check_t(t)
    return _out(cfg.beta0 + (cfg.beta1 - cfg.beta0) * t)


def drift_coeff(cfg: VpsdeConfig, t):
    return _out(-0.5 * np.asarray(beta(cfg, t)))


def diffusion_coeff(cfg: VpsdeConfig, t):
    return _out(np.sqrt(beta(cfg, t)))


def integral_beta(cfg: VpsdeConfig, t):
    t = _check_t(t)
    return _out(cfg.beta0 * t + 0.5 * (cfg.beta1 - cfg.beta0) * t**2)


def marginal_params(cfg: VpsdeConfig, t):
    """Return ``(mean_scale, sigma)`` of q(Z^t | Z^0) = N(mean_scale * Z^0, sigma^2 I).

    Uses the contracting form exp(-1/2 int beta) and reads the noise term as a variance,
    sigma_t^2 = 1 - (1 - sigma0^2) exp(-int beta).
    """
    ib = np.asarray(integral_beta(cfg, t))
    mean_scale = np.exp(-0.5 * ib)
    var = -np.expm1(-ib) + cfg.sigma0**2 * np.exp(-ib)
    return _out(mean_scale), _out(np.sqrt(var))


def sample_transition(cfg: VpsdeConfig, z0, t, noise):
    z0 = np.asarray(z0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if z0.shape != noise.shape:
        raise ValueError(f"noise shape {noise.shape} does not match z0 shape {z0.shape}")
    scale, sigma = marginal_params(cfg, t)
    return scale * z0 + sigma * noise


class _ImportanceTable:
    """Inverse-CDF table for the density proportional to g(t)^2 / sigma_t^2 on [eps_t, 1]."""

    def __init__(self, cfg: VpsdeConfig, size=_IMPORTANCE_GRID):
        grid = np.linspace(cfg.eps_t, 1.0, size)
        _, sigma = marginal_params(cfg, grid)
        if np.any(sigma <= 0):
            raise ValueError("importance sampling needs sigma_t > 0 on the grid; raise eps_t or sigma0")
        dens = beta(cfg, grid) / sigma**2
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        self.grid, self.cdf = grid, cdf
        self.norm = cdf[-1]
        self.eps_t = cfg.eps_t
        # piecewise-linear CDF => piecewise-constant sampling density per cell
        self.cell_dens = np.diff(cdf) / np.diff(grid) / self.norm

    def sample(self, u):
        t = np.interp(u * self.norm, self.cdf, self.grid)
        cell = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, len(self.cell_dens) - 1)
        weight = 1.0 / ((1.0 - self.eps_t) * self.cell_dens[cell])
        return t, weight


_TABLES: dict = {}


def importance_table(cfg: VpsdeConfig) -> _ImportanceTable:
    if cfg not in _TABLES:
        _TABLES[cfg] = _ImportanceTable(cfg)
    return _TABLES[cfg]


def sample_time(cfg: VpsdeConfig, rng: np.random.Generator, mode="uniform", size=None):
    """Draw diffusion times in [eps_t, 1] together with their importance weights.

    ``uniform`` returns weight 1. ``importance`` draws from the g^2/sigma^2 density and
    returns weights ``p_uniform(t) / q(t)`` so weighted averages estimate uniform ones.
    """
    u = rng.random(size)
    if mode == "uniform":
        t = cfg.eps_t + (1.0 - cfg.eps_t) * u
        return _out(t), _out(np.ones_like(t))
    if mode == "importance":
        t, w = importance_table(cfg).sample(u)
        return _out(t), _out(w)
    raise ValueError(f"unknown time sampling mode {mode!r}")


def cross_entropy_constant(cfg: VpsdeConfig, n: int, d: int, sigma=None) -> float:
    """N * d * log(2 pi e sigma^2) with sigma the kernel std at the cutoff eps_t."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if sigma is None:
        _, sigma = marginal_params(cfg, cfg.eps_t)
    if sigma <= 0:
        raise ValueError("sigma at the time cutoff is zero; set eps_t > 0 or sigma0 > 0")
    return float(n * d * np.log(2 * np.pi * np.e * sigma**2))
