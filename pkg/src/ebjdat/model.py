"""MLP classifier reinterpreted as an energy model.

The network f maps inputs to K logits. Three energies derive from it:

    marginal   E(x)   = -log sum_y exp(f(x)[y])
    joint      E(x,y) = -f(x)[y]
    restricted E(x~|x): E(x~) evaluated only inside the l-inf ball around x

so the class posterior exp(-E(x,y)) / exp(-E(x)) is exactly the softmax of
the logits and classification never pays for a partition function.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, DomainError

# Seed-stream tags keep rngs derived from one user seed independent.
_INIT_STREAM = 11


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of the energy network.

    layer_dims runs input -> hidden... -> classes; at least one hidden
    layer and at least two classes are required.
    """

    layer_dims: tuple[int, ...]
    activation: str = "swish"
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 3:
            raise ConfigError("layer_dims needs input, >=1 hidden, and output")
        if any(d <= 0 for d in dims):
            raise ConfigError(f"layer_dims must be positive, got {dims}")
        if dims[-1] < 2:
            raise ConfigError("at least two classes are required")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError(
                f"unknown activation {self.activation!r}; "
                f"expected one of {ad.ACTIVATIONS}"
            )

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]


class Params:
    """Named parameter tensors in a fixed, deterministic order."""

    def __init__(self, items: Sequence[tuple[str, Tensor]]):
        names = [n for n, _ in items]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names")
        self._items: list[tuple[str, Tensor]] = list(items)

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def get(self, name: str) -> Tensor:
        for n, t in self._items:
            if n == name:
                return t
        raise KeyError(name)

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self._items]

    def zero_grads(self) -> None:
        for _, t in self._items:
            t.grad = None

    def copy(self) -> "Params":
        return Params([
            (n, Tensor(t.data.copy(), requires_grad=t.requires_grad))
            for n, t in self._items
        ])

    def n_scalars(self) -> int:
        return sum(t.data.size for _, t in self._items)


def init_params(spec: MlpSpec) -> Params:
    """Scaled-uniform fan-in init: W ~ U(+-1/sqrt(fan_in)), biases zero.

    Bitwise reproducible for a given (spec, seed).
    """
    rng = np.random.default_rng([spec.seed, _INIT_STREAM])
    items: list[tuple[str, Tensor]] = []
    dims = spec.layer_dims
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1]))
        items.append((f"w{i}", Tensor(w, requires_grad=True)))
        items.append((f"b{i}", Tensor(np.zeros(dims[i + 1]), requires_grad=True)))
    return Params(items)


def _check_labels(y: np.ndarray, k: int, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionError(f"labels must be a length-{n} vector, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise DomainError("labels must be integers")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    return y


class EnergyModel:
    """Spec plus parameters, with graph-building and plain-numpy views.

    Graph-building methods (forward_logits, energy_*) accept Tensors and
    record onto the tape; the *_values / grad_* helpers take raw arrays
    and are what samplers, attacks, and metrics consume.
    """

    def __init__(self, spec: MlpSpec, params: Params | None = None):
        self.spec = spec
        self.params = params if params is not None else init_params(spec)
        self._check_param_shapes()

    def _check_param_shapes(self) -> None:
        dims = self.spec.layer_dims
        for i in range(len(dims) - 1):
            w = self.params.get(f"w{i}")
            b = self.params.get(f"b{i}")
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise DimensionError(
                    f"layer {i} parameters do not match spec dims {dims}"
                )

    # -- graph-building ----------------------------------------------------

    def _as_input(self, x) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(x)
        if t.ndim != 2 or t.shape[1] != self.spec.input_dim:
            raise DimensionError(
                f"expected [batch, {self.spec.input_dim}] inputs, got {t.shape}"
            )
        return t

    def forward_logits(self, x, *, track_params: bool = True) -> Tensor:
        """Logits f(x) as a recorded graph.

        With track_params=False the parameters enter as detached leaves, so
        backward only reaches the input; Langevin and attack loops use this
        to skip the wasted parameter gradients.
        """
        h = self._as_input(x)
        n_layers = len(self.spec.layer_dims) - 1
        for i in range(n_layers):
            w = self.params.get(f"w{i}")
            b = self.params.get(f"b{i}")
            if not track_params:
                w, b = w.detach(), b.detach()
            h = ad.matmul(h, w) + b
            if i != n_layers - 1:
                h = ad.activation(h, self.spec.activation)
        return h

    def energy_marginal(self, x, *, track_params: bool = True) -> Tensor:
        """E(x) = -logsumexp_y f(x)[y], one scalar per row."""
        return ad.neg(ad.logsumexp_rows(self.forward_logits(x, track_params=track_params)))

    def energy_joint(self, x, y, *, track_params: bool = True) -> Tensor:
        """E(x, y) = -f(x)[y]."""
        logits = self.forward_logits(x, track_params=track_params)
        y = _check_labels(y, self.spec.n_classes, logits.shape[0])
        return ad.neg(ad.gather_rows(logits, y))

    def energy_conditional(self, x_adv, x_ref, eps: float) -> Tensor:
        """E(x~|x): the marginal energy restricted to the l-inf ball.

        The conditional density only re-normalizes over the ball, so the
        energy value is E(x~); calling this outside the ball (beyond a
        1e-9 tolerance) is a contract violation.
        """
        xa = np.asarray(_data_of(x_adv), dtype=np.float64)
        xr = np.asarray(_data_of(x_ref), dtype=np.float64)
        if xa.shape != xr.shape:
            raise DimensionError(f"shapes differ: {xa.shape} vs {xr.shape}")
        gap = np.max(np.abs(xa - xr)) if xa.size else 0.0
        if gap > eps + 1e-9:
            raise DomainError(
                f"perturbation leaves the eps={eps} ball (max |dx| = {gap:.3g})"
            )
        return self.energy_marginal(x_adv)

    # -- plain-numpy views ---------------------------------------------------

    def logits_values(self, x: np.ndarray) -> np.ndarray:
        return self.forward_logits(Tensor(x), track_params=False).data

    def energy_values(self, x: np.ndarray) -> np.ndarray:
        return self.energy_marginal(Tensor(x), track_params=False).data

    def joint_energy_values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.energy_joint(Tensor(x), y, track_params=False).data

    def class_posterior(self, x) -> np.ndarray:
        """p(y|x) rows; numerically a stable softmax of the logits."""
        logits = self.logits_values(_data_of(x))
        m = logits.max(axis=1, keepdims=True)
        z = np.exp(logits - m)
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Argmax class per row; ties resolve to the smallest index."""
        return np.argmax(self.logits_values(x), axis=1)

    # -- input gradients (parameters detached) -------------------------------

    def grad_energy_input(self, x: np.ndarray) -> np.ndarray:
        """d E(x_i) / d x_i for each row, stacked."""
        xt = Tensor(x, requires_grad=True)
        ad.tsum(self.energy_marginal(xt, track_params=False)).backward()
        return xt.grad

    def grad_joint_energy_input(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """d E(x_i, y_i) / d x_i for each row, stacked."""
        xt = Tensor(x, requires_grad=True)
        ad.tsum(self.energy_joint(xt, y, track_params=False)).backward()
        return xt.grad

    def grad_ce_input(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of per-row cross-entropy w.r.t. each input row."""
        xt = Tensor(x, requires_grad=True)
        logits = self.forward_logits(xt, track_params=False)
        y = _check_labels(y, self.spec.n_classes, logits.shape[0])
        ce = ad.sub(ad.logsumexp_rows(logits), ad.gather_rows(logits, y))
        ad.tsum(ce).backward()
        return xt.grad


def _data_of(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
