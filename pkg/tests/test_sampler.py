"""Langevin sampler checks, including stationarity against a scalar AR(1).

On the quadratic energy E(x) = |x|^2 / 2 the chain reduces per coordinate
to x' = (1 - c^2/2) x + c eps, which oracles.ar1_chain_stats simulates
directly; long-run moments of the two must agree.
"""
from __future__ import annotations

import numpy as np
import pytest

from ebjdat.errors import ConfigError, DomainError, SamplerDivergenceError
from ebjdat.model import EnergyModel, MlpSpec
from ebjdat.sampler import (
    ReplayBuffer,
    SamplerConfig,
    informative_init,
    sample_negatives,
    sgld_step,
)

from oracles import ar1_chain_stats


class QuadraticEnergy:
    """E(x) = sum(x^2) / 2 with the gradient written out by hand."""

    def grad_energy_input(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)


class BlowUpEnergy:
    def grad_energy_input(self, x: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(x, dtype=np.float64), np.nan)


def test_config_validation():
    SamplerConfig(steps=0, step_size=0.0)  # degenerate settings allowed
    with pytest.raises(ConfigError):
        SamplerConfig(steps=-1)
    with pytest.raises(ConfigError):
        SamplerConfig(reinit_prob=1.5)
    with pytest.raises(ConfigError):
        SamplerConfig(buffer_size=0)
    with pytest.raises(ConfigError):
        SamplerConfig(init_mode="gaussian")
    with pytest.raises(ConfigError):
        SamplerConfig(domain_lo=1.0, domain_hi=-1.0)


def test_zero_step_size_with_zero_noise_is_identity():
    cfg = SamplerConfig(step_size=0.0)
    x = np.array([[0.3, -0.4]])
    out = sgld_step(QuadraticEnergy(), x, cfg, noise=np.zeros_like(x))
    assert np.array_equal(out, x)


def test_single_step_matches_closed_form():
    # Fixed noise: x' = x - (c^2/2) x + c eps exactly, before clamping.
    cfg = SamplerConfig(step_size=0.1, domain_lo=-10, domain_hi=10)
    x = np.array([[0.5, -0.25]])
    eps = np.array([[1.0, -2.0]])
    out = sgld_step(QuadraticEnergy(), x, cfg, noise=eps)
    want = x - 0.005 * x + 0.1 * eps
    assert np.allclose(out, want, atol=1e-15)


def test_iterates_stay_in_box():
    cfg = SamplerConfig(step_size=0.5, domain_lo=-1, domain_hi=1)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(64, 2))
    for _ in range(50):
        x = sgld_step(QuadraticEnergy(), x, cfg, rng)
        assert x.min() >= -1 and x.max() <= 1


def test_out_of_box_input_rejected():
    cfg = SamplerConfig()
    with pytest.raises(DomainError):
        sgld_step(QuadraticEnergy(), np.array([[1.5, 0.0]]), cfg,
                  noise=np.zeros((1, 2)))


def test_divergent_gradient_raises():
    cfg = SamplerConfig()
    with pytest.raises(SamplerDivergenceError):
        sgld_step(BlowUpEnergy(), np.zeros((2, 2)), cfg, noise=np.zeros((2, 2)))


def test_stationary_moments_match_scalar_recursion():
    # Run many chains of the real sampler on the quadratic energy, compare
    # long-run mean/variance to the directly simulated AR(1) recursion.
    c = 0.1
    cfg = SamplerConfig(steps=0, step_size=c, domain_lo=-10, domain_hi=10)
    rng = np.random.default_rng(123)
    n_chains, steps = 512, 3000
    x = np.zeros((n_chains, 2))
    for _ in range(steps):
        x = sgld_step(QuadraticEnergy(), x, cfg, rng)

    ref_mean, ref_var = ar1_chain_stats(1.0 - c * c / 2.0, c, steps, 4096, seed=777)
    got_mean, got_var = float(x.mean()), float(x.var())
    assert abs(got_mean - ref_mean) <= 0.05
    assert abs(got_var - ref_var) <= 0.15 * ref_var


def test_buffer_init_uniform_and_deterministic():
    cfg = SamplerConfig(buffer_size=100, seed=9)
    a = ReplayBuffer.initialize(cfg, dim=3)
    b = ReplayBuffer.initialize(cfg, dim=3)
    assert np.array_equal(a.entries, b.entries)
    assert a.entries.shape == (100, 3)
    assert a.entries.min() >= -1 and a.entries.max() <= 1


def test_full_reinit_zero_steps_gives_iid_uniform():
    # reinit_prob=1 with steps=0 must return fresh uniform points and
    # write them back into the chosen slots.
    cfg = SamplerConfig(steps=0, reinit_prob=1.0, buffer_size=50, seed=3)
    buf = ReplayBuffer.initialize(cfg, dim=2)
    before = buf.entries.copy()
    out = sample_negatives(QuadraticEnergy(), buf, 20, cfg)
    assert out.shape == (20, 2)
    assert out.min() >= -1 and out.max() <= 1
    assert not np.array_equal(buf.entries, before)


def test_no_reinit_zero_steps_returns_buffer_rows():
    cfg = SamplerConfig(steps=0, reinit_prob=0.0, buffer_size=50, seed=4)
    buf = ReplayBuffer.initialize(cfg, dim=2)
    snapshot = buf.entries.copy()
    out = sample_negatives(QuadraticEnergy(), buf, 10, cfg)
    # Every returned row is an existing buffer row, and non-selected slots
    # are untouched.
    for row in out:
        assert any(np.array_equal(row, s) for s in snapshot)
    assert np.array_equal(buf.entries, snapshot)  # write-back of same values


def test_writeback_touches_only_selected_slots():
    cfg = SamplerConfig(steps=2, step_size=0.1, reinit_prob=0.0,
                        buffer_size=200, seed=5)
    buf = ReplayBuffer.initialize(cfg, dim=2)
    before = buf.entries.copy()
    # Replay the buffer's stream to predict which slots get selected: the
    # init draw comes first, then the slot indices.
    rng_probe = np.random.default_rng([cfg.seed, 22])
    rng_probe.uniform(cfg.domain_lo, cfg.domain_hi, size=(cfg.buffer_size, 2))
    slots = rng_probe.integers(0, buf.capacity, size=8)
    sample_negatives(QuadraticEnergy(), buf, 8, cfg)
    untouched = np.setdiff1d(np.arange(buf.capacity), slots)
    assert np.array_equal(buf.entries[untouched], before[untouched])
    assert not np.array_equal(buf.entries[slots], before[slots])


def test_sample_negatives_detached_from_buffer():
    cfg = SamplerConfig(steps=0, reinit_prob=0.0, buffer_size=10, seed=6)
    buf = ReplayBuffer.initialize(cfg, dim=2)
    out = sample_negatives(QuadraticEnergy(), buf, 5, cfg)
    out[:] = 99.0
    assert buf.entries.max() <= 1.0


def test_data_plus_noise_requires_data():
    cfg = SamplerConfig(steps=0, reinit_prob=1.0, init_mode="data-plus-noise",
                        buffer_size=10, seed=7)
    buf = ReplayBuffer.initialize(cfg, dim=2)
    with pytest.raises(ConfigError):
        sample_negatives(QuadraticEnergy(), buf, 4, cfg)


def test_informative_init_sigma_zero_returns_exact_rows():
    data = np.array([[0.1, 0.2], [0.3, 0.4], [-0.5, 0.6]])
    rng = np.random.default_rng(8)
    out = informative_init(data, 6, 0.0, rng, -1, 1)
    for row in out:
        assert any(np.array_equal(row, d) for d in data)


def test_informative_init_empty_data_rejected():
    with pytest.raises(DomainError):
        informative_init(np.zeros((0, 2)), 3, 0.1, np.random.default_rng(0), -1, 1)


def test_buffer_reset_is_uniform_refill():
    cfg = SamplerConfig(buffer_size=40, seed=11)
    buf = ReplayBuffer.initialize(cfg, dim=2)
    before = buf.entries.copy()
    buf.reset(cfg)
    assert not np.array_equal(buf.entries, before)
    assert buf.entries.min() >= -1 and buf.entries.max() <= 1


def test_real_model_chain_runs_and_stays_finite():
    model = EnergyModel(MlpSpec((2, 16, 3), seed=1))
    cfg = SamplerConfig(steps=20, step_size=0.1, buffer_size=64, seed=2)
    buf = ReplayBuffer.initialize(cfg, dim=2)
    out = sample_negatives(model, buf, 32, cfg)
    assert out.shape == (32, 2)
    assert np.all(np.isfinite(out))
    assert out.min() >= -1 and out.max() <= 1
