"""Stochastic gradient Langevin dynamics with a persistent replay buffer.

The chain follows

    x_{t+1} = x_t + (c^2 / 2) * d log p(x_t) / dx + c * eps,  eps ~ N(0, I)

with d log p / dx = -dE/dx, every iterate clamped back into the sampling
box. Negatives for training come from a fixed-size buffer: each draw picks
random slots, re-initializes a fraction of them, runs the chain, and writes
the results back, so chains persist across training steps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, SamplerDivergenceError

INIT_MODES = ("uniform-box", "data-plus-noise")

# Seed-stream tag for the buffer's generator.
_BUFFER_STREAM = 22


@dataclass(frozen=True)
class SamplerConfig:
    """Langevin chain and replay-buffer settings.

    steps=0 and step_size=0 are allowed as degenerate settings (they turn
    the sampler into a plain buffer read / identity map), which the tests
    rely on to isolate buffer bookkeeping from the dynamics.
    """

    steps: int = 20
    step_size: float = 0.1
    buffer_size: int = 1000
    reinit_prob: float = 0.05
    init_mode: str = "uniform-box"
    init_noise_sigma: float = 0.1
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.step_size < 0:
            raise ConfigError("step_size must be >= 0")
        if self.buffer_size < 1:
            raise ConfigError("buffer_size must be >= 1")
        if not 0.0 <= self.reinit_prob <= 1.0:
            raise ConfigError("reinit_prob must lie in [0, 1]")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(
                f"unknown init_mode {self.init_mode!r}; expected one of {INIT_MODES}"
            )
        if self.init_noise_sigma < 0:
            raise ConfigError("init_noise_sigma must be >= 0")
        if not self.domain_lo < self.domain_hi:
            raise ConfigError("domain_lo must be < domain_hi")


class ReplayBuffer:
    """Fixed-capacity store of chain states plus the rng that drives them.

    The generator lives here so that checkpointing the buffer checkpoints
    the whole stochastic state of the negative sampler.
    """

    def __init__(self, entries: np.ndarray, rng: np.random.Generator):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 2:
            raise DimensionError("buffer entries must be [capacity, dim]")
        self.entries = entries
        self.rng = rng

    @classmethod
    def initialize(cls, cfg: SamplerConfig, dim: int) -> "ReplayBuffer":
        """Fresh buffer, slots i.i.d. uniform over the sampling box."""
        rng = np.random.default_rng([cfg.seed, _BUFFER_STREAM])
        entries = rng.uniform(cfg.domain_lo, cfg.domain_hi, size=(cfg.buffer_size, dim))
        return cls(entries, rng)

    @property
    def capacity(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def reset(self, cfg: SamplerConfig) -> None:
        """Refill every slot uniformly; used after a divergent step."""
        self.entries[:] = self.rng.uniform(
            cfg.domain_lo, cfg.domain_hi, size=self.entries.shape
        )


def _check_in_box(x: np.ndarray, lo: float, hi: float) -> None:
    if x.size and (x.min() < lo or x.max() > hi):
        raise DomainError(f"points leave the sampling box [{lo}, {hi}]")


def sgld_step(model, x: np.ndarray, cfg: SamplerConfig,
              rng: np.random.Generator | None = None,
              noise: np.ndarray | None = None) -> np.ndarray:
    """One Langevin update of a batch, clamped to the box.

    `model` only needs grad_energy_input; `noise` overrides the rng draw
    so tests can fix epsilon exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_in_box(x, cfg.domain_lo, cfg.domain_hi)
    g = model.grad_energy_input(x)
    if not np.all(np.isfinite(g)):
        raise SamplerDivergenceError("non-finite energy gradient in Langevin step")
    if noise is None:
        if rng is None:
            raise ConfigError("sgld_step needs an rng when noise is not given")
        noise = rng.standard_normal(x.shape)
    c = cfg.step_size
    out = x - 0.5 * c * c * g + c * noise
    return np.clip(out, cfg.domain_lo, cfg.domain_hi)


def informative_init(data: np.ndarray, n: int, sigma: float,
                     rng: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    """Random data rows plus isotropic noise, clamped to the box."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise DomainError("informative init needs a non-empty [n, dim] data array")
    rows = data[rng.integers(0, data.shape[0], size=n)]
    rows = rows + sigma * rng.standard_normal(rows.shape)
    return np.clip(rows, lo, hi)


def sample_negatives(model, buffer: ReplayBuffer, n: int, cfg: SamplerConfig,
                     data: np.ndarray | None = None) -> np.ndarray:
    """Draw n negatives: random slots, partial re-init, chain, write-back.

    Each selected slot restarts with probability reinit_prob (uniform box
    or noised data rows per init_mode), then the whole batch runs `steps`
    Langevin updates and the results replace the originating slots. The
    returned array is detached storage, never a view of the buffer.
    """
    if n < 1:
        raise ConfigError("need n >= 1 negatives")
    rng = buffer.rng
    slots = rng.integers(0, buffer.capacity, size=n)
    restart = rng.random(n) < cfg.reinit_prob
    x = buffer.entries[slots].copy()
    k = int(restart.sum())
    if k:
        if cfg.init_mode == "uniform-box":
            x[restart] = rng.uniform(cfg.domain_lo, cfg.domain_hi, size=(k, buffer.dim))
        else:
            if data is None:
                raise ConfigError("init_mode 'data-plus-noise' requires data")
            x[restart] = informative_init(
                data, k, cfg.init_noise_sigma, rng, cfg.domain_lo, cfg.domain_hi
            )
    for _ in range(cfg.steps):
        x = sgld_step(model, x, cfg, rng)
    buffer.entries[slots] = x
    return x.copy()
