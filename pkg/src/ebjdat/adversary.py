"""Inner maximization: energy-ascent perturbations and a PGD baseline.

Training perturbations climb the joint energy E(x~, y) = -f(x~)[y] inside
an l-inf ball; deterministic ascent by default, with optional Langevin
noise. Evaluation uses standard sign-gradient PGD on cross-entropy. Every
step projects back into the ball and the data box.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AttackDivergenceError, ConfigError, DomainError

# Tolerance on the ball constraint; projection keeps iterates well inside
# but callers hand us float arithmetic.
BALL_TOL = 1e-9

# Seed-stream tag for attack generators created from a bare seed.
_ATTACK_STREAM = 33


@dataclass(frozen=True)
class AttackConfig:
    """l-inf attack settings shared by the energy and PGD adversaries.

    step_size=None resolves to 2.5 * epsilon / steps, capped at 2 * epsilon
    so a single-step attack cannot jump across the ball and back.
    """

    epsilon: float = 0.1
    steps: int = 5
    step_size: float | None = None
    add_noise: bool = False
    random_start: bool = True
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.step_size is not None:
            if self.step_size <= 0:
                raise ConfigError("step_size must be > 0")
            if self.step_size > 2.0 * self.epsilon + BALL_TOL:
                raise ConfigError("step_size must not exceed 2 * epsilon")
        if not self.domain_lo < self.domain_hi:
            raise ConfigError("domain_lo must be < domain_hi")

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return min(2.5 * self.epsilon / self.steps, 2.0 * self.epsilon)


def _rng_for(cfg: AttackConfig, rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng([cfg.seed, _ATTACK_STREAM])


def project_linf(x_adv: np.ndarray, x_ref: np.ndarray, eps: float,
                 lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Clamp into the eps-ball around x_ref, then into the data box."""
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x_adv.shape != x_ref.shape:
        raise DomainError(f"shapes differ: {x_adv.shape} vs {x_ref.shape}")
    out = np.clip(x_adv, x_ref - eps, x_ref + eps)
    return np.clip(out, lo, hi)


def _check_ball(x_adv: np.ndarray, x_ref: np.ndarray, eps: float) -> None:
    gap = np.max(np.abs(x_adv - x_ref)) if x_adv.size else 0.0
    if gap > eps + BALL_TOL:
        raise DomainError(
            f"iterate outside the eps={eps} ball (max |dx| = {gap:.3g})"
        )


def adv_sgld_step(model, x_adv: np.ndarray, y: np.ndarray, x_ref: np.ndarray,
                  cfg: AttackConfig,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """One ascent step on the joint energy, projected back into the ball.

    The update is x~ + alpha * dE(x~, y)/dx~, which raises the energy of
    the labeled pair, i.e. lowers the conditional likelihood. With
    add_noise, Gaussian noise of scale alpha turns it into a Langevin step.
    """
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    _check_ball(x_adv, x_ref, cfg.epsilon)
    g = model.grad_joint_energy_input(x_adv, y)
    if not np.all(np.isfinite(g)):
        raise AttackDivergenceError("non-finite joint-energy gradient")
    out = x_adv + cfg.alpha * g
    if cfg.add_noise:
        out = out + cfg.alpha * _rng_for(cfg, rng).standard_normal(out.shape)
    return project_linf(out, x_ref, cfg.epsilon, cfg.domain_lo, cfg.domain_hi)


def energy_adversary(model, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Multi-step energy-ascent perturbation of a labeled batch."""
    rng = _rng_for(cfg, rng)
    x = np.asarray(x, dtype=np.float64)
    if cfg.random_start:
        x_adv = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
    else:
        x_adv = x.copy()
    x_adv = project_linf(x_adv, x, cfg.epsilon, cfg.domain_lo, cfg.domain_hi)
    for _ in range(cfg.steps):
        x_adv = adv_sgld_step(model, x_adv, y, x, cfg, rng)
    return x_adv


def pgd_ce_attack(model, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Sign-gradient PGD on cross-entropy; the evaluation attack."""
    rng = _rng_for(cfg, rng)
    x = np.asarray(x, dtype=np.float64)
    if cfg.random_start:
        x_adv = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
    else:
        x_adv = x.copy()
    x_adv = project_linf(x_adv, x, cfg.epsilon, cfg.domain_lo, cfg.domain_hi)
    for _ in range(cfg.steps):
        g = model.grad_ce_input(x_adv, y)
        if not np.all(np.isfinite(g)):
            raise AttackDivergenceError("non-finite cross-entropy gradient")
        x_adv = project_linf(
            x_adv + cfg.alpha * np.sign(g), x, cfg.epsilon,
            cfg.domain_lo, cfg.domain_hi,
        )
    return x_adv
