"""Evaluation metrics and the energy report artifact.

Covers classification accuracy under attack, paired energy-gap statistics,
shared-bin energy histograms with an overlap coefficient, and an RBF-kernel
maximum mean discrepancy for judging generated samples. Reports serialize
to a canonical JSON document plus a raw-energies CSV; identical inputs
produce identical bytes.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .adversary import AttackConfig, pgd_ce_attack
from .data import Dataset
from .errors import ConfigError, DimensionError

_EVAL_STREAM = 66


def accuracy(model, ds: Dataset) -> float:
    """Fraction of argmax predictions matching labels; ties go to the
    smallest class index, so an all-zero model scores the class-0 rate."""
    return float((model.predict(ds.x) == ds.y).mean())


def robust_accuracy(model, ds: Dataset, attack: AttackConfig,
                    rng: np.random.Generator | None = None) -> float:
    """Accuracy after a PGD cross-entropy attack on every test point."""
    if rng is None:
        rng = np.random.default_rng([attack.seed, _EVAL_STREAM])
    x_adv = pgd_ce_attack(model, ds.x, ds.y, attack, rng)
    return float((model.predict(x_adv) == ds.y).mean())


def one_to_one_energy_gap(model, x: np.ndarray,
                          x_adv: np.ndarray) -> tuple[float, float]:
    """Mean |E(x_adv_i) - E(x_i)| and the population variance of the
    signed differences, over aligned pairs."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise DimensionError(f"pairs must align: {x.shape} vs {x_adv.shape}")
    d = model.energy_values(x_adv) - model.energy_values(x)
    return float(np.mean(np.abs(d))), float(np.var(d))


def signed_gap_mean(model, x: np.ndarray, x_adv: np.ndarray) -> float:
    d = model.energy_values(np.asarray(x_adv)) - model.energy_values(np.asarray(x))
    return float(np.mean(d))


def histogram_overlap(counts_a: np.ndarray, counts_b: np.ndarray) -> float:
    """Sum of per-bin minima divided by the (common) population size."""
    counts_a = np.asarray(counts_a, dtype=np.float64)
    counts_b = np.asarray(counts_b, dtype=np.float64)
    if counts_a.shape != counts_b.shape:
        raise DimensionError("histograms must share bin edges")
    n = counts_a.sum()
    if n == 0:
        return 0.0
    return float(np.minimum(counts_a, counts_b).sum() / n)


@dataclass
class EnergyReport:
    """Raw energies and summary statistics for three populations.

    Histograms share one set of bin edges spanning the pooled energy range.
    Joint energies use true labels where given and the model's predicted
    class otherwise (generated samples carry no labels).
    """

    edges: np.ndarray
    counts_clean: np.ndarray
    counts_adv: np.ndarray
    counts_gen: np.ndarray
    e_clean: np.ndarray
    e_adv: np.ndarray
    e_gen: np.ndarray
    ej_clean: np.ndarray
    ej_adv: np.ndarray
    ej_gen: np.ndarray
    gap_mean: float
    gap_var: float
    gap_signed_mean: float
    overlap_clean_adv: float
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)


def energy_histograms(model, clean: np.ndarray, adv: np.ndarray,
                      gen: np.ndarray, bins: int,
                      y_clean: np.ndarray | None = None,
                      y_adv: np.ndarray | None = None,
                      config: dict | None = None) -> EnergyReport:
    """Marginal-energy histograms of the three populations on shared bins.

    clean and adv must be aligned pairs (the gap statistics are per-pair);
    gen may have any size.
    """
    if bins < 2:
        raise ConfigError("bins must be >= 2")
    clean = np.asarray(clean, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if clean.shape != adv.shape:
        raise DimensionError("clean/adv populations must align")

    e_clean = model.energy_values(clean)
    e_adv = model.energy_values(adv)
    e_gen = model.energy_values(gen)

    def joint(x, e_marginal, y):
        if y is None:
            y = model.predict(x)
        return model.joint_energy_values(x, y)

    ej_clean = joint(clean, e_clean, y_clean)
    ej_adv = joint(adv, e_adv, y_adv)
    ej_gen = joint(gen, e_gen, None)

    pooled = np.concatenate([e_clean, e_adv, e_gen])
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts_clean = np.histogram(e_clean, bins=edges)[0]
    counts_adv = np.histogram(e_adv, bins=edges)[0]
    counts_gen = np.histogram(e_gen, bins=edges)[0]

    d = e_adv - e_clean
    return EnergyReport(
        edges=edges,
        counts_clean=counts_clean,
        counts_adv=counts_adv,
        counts_gen=counts_gen,
        e_clean=e_clean, e_adv=e_adv, e_gen=e_gen,
        ej_clean=ej_clean, ej_adv=ej_adv, ej_gen=ej_gen,
        gap_mean=float(np.mean(np.abs(d))),
        gap_var=float(np.var(d)),
        gap_signed_mean=float(np.mean(d)),
        overlap_clean_adv=histogram_overlap(counts_clean, counts_adv),
        config=dict(config or {}),
    )


# -- maximum mean discrepancy -----------------------------------------------------


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def median_bandwidth(a: np.ndarray, b: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled sample."""
    pooled = np.concatenate([a, b])
    d2 = _sq_dists(pooled, pooled)
    iu = np.triu_indices(len(pooled), k=1)
    return float(np.median(np.sqrt(d2[iu]))) if iu[0].size else 0.0


def mmd_rbf(a: np.ndarray, b: np.ndarray,
            bandwidth: float | None = None) -> float:
    """Unbiased squared MMD with a Gaussian kernel.

    Equal sample sizes use the paired U-statistic (the cross term skips
    i == j), so feeding the same sample twice returns exactly zero; unequal
    sizes use the standard three-term estimate. bandwidth=None applies the
    median heuristic over the pooled points; a fully degenerate pool (all
    points identical) returns 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"samples must be [n, d] with matching d: "
                             f"{a.shape} vs {b.shape}")
    m, n = len(a), len(b)
    if m < 2 or n < 2:
        raise DimensionError("need at least two points per sample")
    if bandwidth is None:
        bandwidth = median_bandwidth(a, b)
        if bandwidth == 0.0:
            return 0.0
    elif bandwidth <= 0:
        raise ConfigError("bandwidth must be > 0")

    gamma = 1.0 / (2.0 * bandwidth * bandwidth)
    k_aa = np.exp(-gamma * _sq_dists(a, a))
    k_bb = np.exp(-gamma * _sq_dists(b, b))
    k_ab = np.exp(-gamma * _sq_dists(a, b))
    s_aa = k_aa.sum() - np.trace(k_aa)
    s_bb = k_bb.sum() - np.trace(k_bb)
    if m == n:
        s_ab = k_ab.sum() - np.trace(k_ab)
        return float((s_aa + s_bb - 2.0 * s_ab) / (m * (m - 1)))
    return float(s_aa / (m * (m - 1)) + s_bb / (n * (n - 1))
                 - 2.0 * k_ab.sum() / (m * n))


# -- serialization -----------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def canonical_json(obj) -> str:
    """Stable serialization: sorted keys, fixed separators, newline end."""
    return json.dumps(_jsonable(obj), sort_keys=True,
                      separators=(",", ": "), indent=2) + "\n"


def report_to_dict(report: EnergyReport) -> dict:
    metrics = {
        "acc": report.metrics.get("acc"),
        "robust_acc": report.metrics.get("robust_acc"),
        "mmd_gen": report.metrics.get("mmd_gen"),
        "overlap_clean_adv": report.overlap_clean_adv,
    }
    return {
        "config": report.config,
        "gap": {
            "mean": report.gap_mean,
            "variance": report.gap_var,
            "signed_mean": report.gap_signed_mean,
        },
        "histograms": {
            "edges": report.edges,
            "clean": report.counts_clean,
            "adv": report.counts_adv,
            "gen": report.counts_gen,
        },
        "metrics": metrics,
    }


def report_export(report: EnergyReport, path: str) -> None:
    """Write the JSON document at `path` and raw energies next to it.

    The CSV shares the path stem: report.json -> report.csv, columns
    population,index,energy_marginal,energy_joint.
    """
    with open(path, "w") as fh:
        fh.write(canonical_json(report_to_dict(report)))
    csv_path = os.path.splitext(path)[0] + ".csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["population", "index", "energy_marginal", "energy_joint"])
        for name, marg, joint in (
            ("clean", report.e_clean, report.ej_clean),
            ("adv", report.e_adv, report.ej_adv),
            ("gen", report.e_gen, report.ej_gen),
        ):
            for i, (em, ej) in enumerate(zip(marg, joint)):
                writer.writerow([name, i, repr(float(em)), repr(float(ej))])
