"""Joint training loop: generative, alignment, and classification terms.

Each step minimizes

    total = w1 * l_gen + w2 * l_adv_gap + w3 * l_ce

where l_gen     = mean E(x) - mean E(x_neg)      (negatives from Langevin),
      l_adv_gap = mean E(x_adv) - mean E(x)      (perturbations detached),
      l_ce      = cross-entropy on perturbed (default) or mixed batches.

Minimizing l_gen pushes data energy below sample energy (likelihood ascent
with the partition function cancelled); minimizing l_adv_gap drags the
perturbed energies back onto the clean ones. All-zero weights select the
plain-CE baseline: total becomes clean cross-entropy so the same loop
trains the reference model the evaluation suite compares against.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .adversary import AttackConfig, energy_adversary
from .data import Dataset, batches
from .errors import ConfigError, NonFiniteError, TrainingAborted
from .model import EnergyModel, MlpSpec, Params, init_params
from .report import one_to_one_energy_gap
from .sampler import ReplayBuffer, SamplerConfig, sample_negatives

CE_TARGETS = ("adv-only", "clean-plus-adv")
OPTIMIZERS = ("sgd", "adam")

# A loss magnitude past this is treated as divergence even when finite.
DIVERGENCE_LIMIT = 1e4
# Consecutive divergent steps tolerated before the run is aborted.
MAX_CONSECUTIVE_DIVERGENCES = 3

_ATTACK_TRAIN_STREAM = 34
_EPOCH_EVAL_STREAM = 55


@dataclass(frozen=True)
class TrainConfig:
    """Weights, optimization, and sub-configs for one training run.

    w1=w2=w3=0 is the plain-CE baseline mode; w1=w2=0 with w3>0 degenerates
    to standard adversarial training on the energy-ascent perturbations.
    """

    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    lr: float = 0.01
    epochs: int = 10
    batch_size: int = 64
    m_theta: int = 1
    optimizer: str = "sgd"
    ce_target: str = "adv-only"
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.m_theta < 1:
            raise ConfigError("m_theta must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.ce_target not in CE_TARGETS:
            raise ConfigError(f"ce_target must be one of {CE_TARGETS}")

    @property
    def mode(self) -> str:
        if self.w1 == 0 and self.w2 == 0:
            return "standard" if self.w3 == 0 else "AT-only"
        return "eb-jdat"


@dataclass
class LossBreakdown:
    """Per-step loss terms; total = w1*l_gen + w2*l_adv_gap + w3*l_ce except
    in the all-zero-weight baseline, where total is the clean CE itself."""

    l_gen: float
    l_adv_gap: float
    l_ce: float
    total: float
    diverged: bool


@dataclass
class LogRow:
    epoch: int
    l_gen: float
    l_adv_gap: float
    l_ce: float
    total: float
    clean_acc: float
    gap_mean: float
    gap_var: float
    diverged: bool


LOG_COLUMNS = ("epoch", "l_gen", "l_adv_gap", "l_ce", "total",
               "clean_acc", "gap_mean", "gap_var", "diverged")


# -- loss terms ----------------------------------------------------------------


def loss_gen(model: EnergyModel, x_pos: np.ndarray, x_neg: np.ndarray) -> Tensor:
    """mean E(x_pos) - mean E(x_neg); negatives carry no parameter path
    beyond their fixed coordinates (they arrive detached from the chain)."""
    e_pos = ad.tmean(model.energy_marginal(Tensor(x_pos)))
    e_neg = ad.tmean(model.energy_marginal(Tensor(x_neg)))
    return ad.check_finite(ad.sub(e_pos, e_neg), "generative loss")


def loss_adv_gap(model: EnergyModel, x: np.ndarray, x_adv: np.ndarray) -> Tensor:
    """mean E(x_adv) - mean E(x); the perturbed points are fixed inputs."""
    e_adv = ad.tmean(model.energy_marginal(Tensor(x_adv)))
    e_clean = ad.tmean(model.energy_marginal(Tensor(x)))
    return ad.check_finite(ad.sub(e_adv, e_clean), "alignment loss")


def cross_entropy(model: EnergyModel, x: np.ndarray, y: np.ndarray) -> Tensor:
    logits = model.forward_logits(Tensor(x))
    nll = ad.sub(ad.logsumexp_rows(logits), ad.gather_rows(logits, np.asarray(y)))
    return ad.tmean(nll)


def loss_ce(model: EnergyModel, x: np.ndarray, x_adv: np.ndarray,
            y: np.ndarray, ce_target: str) -> Tensor:
    if ce_target == "adv-only":
        out = cross_entropy(model, x_adv, y)
    elif ce_target == "clean-plus-adv":
        out = ad.add(
            ad.mul(cross_entropy(model, x, y), 0.5),
            ad.mul(cross_entropy(model, x_adv, y), 0.5),
        )
    else:
        raise ConfigError(f"ce_target must be one of {CE_TARGETS}")
    return ad.check_finite(out, "cross-entropy loss")


# -- optimizers ------------------------------------------------------------------


class SgdOptimizer:
    kind = "sgd"

    def __init__(self, params: Params, lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for _, t in self.params:
            if t.grad is not None:
                t.data -= self.lr * t.grad

    def state_dict(self) -> dict:
        return {"kind": self.kind, "t": 0}

    def load_state(self, meta: dict, arrays: dict) -> None:
        pass


class AdamOptimizer:
    kind = "adam"

    def __init__(self, params: Params, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params}
        self.v = {n: np.zeros_like(p.data) for n, p in params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"kind": self.kind, "t": self.t}

    def load_state(self, meta: dict, arrays: dict) -> None:
        self.t = int(meta["t"])
        for name in self.m:
            self.m[name] = arrays[f"m.{name}"].copy()
            self.v[name] = arrays[f"v.{name}"].copy()

    def moment_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out


def make_optimizer(kind: str, params: Params, lr: float):
    if kind == "sgd":
        return SgdOptimizer(params, lr)
    if kind == "adam":
        return AdamOptimizer(params, lr)
    raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")


# -- training state ---------------------------------------------------------------


@dataclass
class TrainState:
    """Everything a resumed run needs to continue bit-for-bit."""

    cfg: TrainConfig
    model: EnergyModel
    buffer: ReplayBuffer
    optimizer: object
    attack_rng: np.random.Generator
    epoch: int = 0
    consecutive_divergences: int = 0
    log: list = field(default_factory=list)

    @classmethod
    def initialize(cls, cfg: TrainConfig, dim: int, k: int,
                   spec: MlpSpec | None = None) -> "TrainState":
        if spec is None:
            spec = MlpSpec((dim, 64, 64, k), activation="swish", seed=cfg.seed)
        if spec.input_dim != dim or spec.n_classes < k:
            raise ConfigError(
                f"model spec {spec.layer_dims} does not fit data with "
                f"dim={dim}, classes={k}"
            )
        model = EnergyModel(spec)
        buffer = ReplayBuffer.initialize(cfg.sampler, dim)
        optimizer = make_optimizer(cfg.optimizer, model.params, cfg.lr)
        attack_rng = np.random.default_rng([cfg.seed, _ATTACK_TRAIN_STREAM])
        return cls(cfg=cfg, model=model, buffer=buffer, optimizer=optimizer,
                   attack_rng=attack_rng)


def assemble_losses(model: EnergyModel, x: np.ndarray, y: np.ndarray,
                    x_neg: np.ndarray | None, x_adv: np.ndarray | None,
                    cfg: TrainConfig) -> tuple[Tensor, LossBreakdown]:
    """Weighted total from pre-sampled negatives and perturbations.

    Terms with zero weight are never evaluated, so the total is exactly
    independent of their inputs. In the all-zero baseline mode the total is
    the clean cross-entropy.
    """
    if cfg.mode == "standard":
        ce = ad.check_finite(cross_entropy(model, x, y), "cross-entropy loss")
        return ce, LossBreakdown(0.0, 0.0, ce.item(), ce.item(), False)
    terms = []
    l_gen_v = l_adv_v = l_ce_v = 0.0
    if cfg.w1 > 0:
        t = loss_gen(model, x, x_neg)
        l_gen_v = t.item()
        terms.append(ad.mul(t, cfg.w1))
    if cfg.w2 > 0:
        t = loss_adv_gap(model, x, x_adv)
        l_adv_v = t.item()
        terms.append(ad.mul(t, cfg.w2))
    if cfg.w3 > 0:
        t = loss_ce(model, x, x_adv, y, cfg.ce_target)
        l_ce_v = t.item()
        terms.append(ad.mul(t, cfg.w3))
    total_t = terms[0]
    for t in terms[1:]:
        total_t = ad.add(total_t, t)
    return total_t, LossBreakdown(l_gen_v, l_adv_v, l_ce_v, total_t.item(), False)


def train_step(state: TrainState, x: np.ndarray, y: np.ndarray,
               train_data: np.ndarray | None = None) -> LossBreakdown:
    """One mini-batch update with the divergence guard.

    A non-finite or absurdly large total skips the parameter update, resets
    the replay buffer, and counts toward the consecutive-divergence budget;
    the run aborts (with its epoch recorded) once the budget is spent.
    """
    cfg = state.cfg
    model = state.model
    try:
        x_neg = x_adv = None
        if cfg.mode != "standard":
            if cfg.w1 > 0:
                x_neg = sample_negatives(model, state.buffer, len(x),
                                         cfg.sampler, data=train_data)
            if cfg.w2 > 0 or cfg.w3 > 0:
                x_adv = energy_adversary(model, x, y, cfg.attack,
                                         state.attack_rng)
        total_t, breakdown = assemble_losses(model, x, y, x_neg, x_adv, cfg)
        diverged = abs(breakdown.total) > DIVERGENCE_LIMIT
    except NonFiniteError:
        breakdown = LossBreakdown(np.nan, np.nan, np.nan, np.nan, True)
        diverged = True

    if diverged:
        breakdown.diverged = True
        state.buffer.reset(cfg.sampler)
        state.consecutive_divergences += 1
        if state.consecutive_divergences >= MAX_CONSECUTIVE_DIVERGENCES:
            raise TrainingAborted(state.epoch)
        return breakdown

    state.consecutive_divergences = 0
    model.params.zero_grads()
    total_t.backward()
    for _ in range(cfg.m_theta):
        state.optimizer.step()
    return breakdown


def _epoch_metrics(state: TrainState, ds: Dataset) -> tuple[float, float, float]:
    """Clean accuracy plus the one-to-one energy gap on a fixed subsample.

    The subsample and the perturbation draw are keyed by (seed, epoch), so
    resumed runs reproduce them exactly.
    """
    model = state.model
    acc = float((model.predict(ds.x) == ds.y).mean())
    rng = np.random.default_rng([state.cfg.seed, _EPOCH_EVAL_STREAM, state.epoch])
    take = min(512, ds.n)
    idx = rng.choice(ds.n, size=take, replace=False)
    xs, ys = ds.x[idx], ds.y[idx]
    x_adv = energy_adversary(model, xs, ys, state.cfg.attack, rng)
    gap_mean, gap_var = one_to_one_energy_gap(model, xs, x_adv)
    return acc, gap_mean, gap_var


def fit(cfg: TrainConfig, train_ds: Dataset,
        spec: MlpSpec | None = None,
        state: TrainState | None = None,
        on_epoch_end=None) -> tuple[Params, list[LogRow]]:
    """Run (or continue) training; returns final parameters and the log.

    The log holds one row per optimization step. Accuracy and energy-gap
    columns are filled in at the end of each epoch, so every row of an
    epoch reports that epoch's closing metrics.
    """
    if state is None:
        state = TrainState.initialize(cfg, train_ds.dim, train_ds.k, spec)
    start_row = len(state.log)
    for epoch in range(state.epoch, cfg.epochs):
        state.epoch = epoch
        epoch_start = len(state.log)
        for xb, yb in batches(train_ds, cfg.batch_size, cfg.seed, epoch):
            part = train_step(state, xb, yb, train_data=train_ds.x)
            state.log.append(LogRow(
                epoch=epoch, l_gen=part.l_gen, l_adv_gap=part.l_adv_gap,
                l_ce=part.l_ce, total=part.total, clean_acc=np.nan,
                gap_mean=np.nan, gap_var=np.nan, diverged=part.diverged,
            ))
        acc, gap_mean, gap_var = _epoch_metrics(state, train_ds)
        for row in state.log[epoch_start:]:
            row.clean_acc, row.gap_mean, row.gap_var = acc, gap_mean, gap_var
        state.epoch = epoch + 1
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state.model.params, state.log[start_row:]


def write_log_csv(log: list[LogRow], path: str) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow([
                row.epoch, repr(row.l_gen), repr(row.l_adv_gap), repr(row.l_ce),
                repr(row.total), repr(row.clean_acc), repr(row.gap_mean),
                repr(row.gap_var), int(row.diverged),
            ])
