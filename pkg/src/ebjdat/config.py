"""Run configuration: one strict JSON document drives a whole run.

Every key has a default and unknown keys are rejected at every nesting
level, so a config echo written next to a run's outputs is complete and
re-runnable. The ``EBJD_SEED`` environment variable overrides the seed at
resolve time and is baked into the echo, keeping (echo file) -> (artifacts)
a pure function.
"""
from __future__ import annotations

import json
import os

from .adversary import AttackConfig
from .autodiff import ACTIVATIONS
from .data import Dataset, load_csv, load_idx, make_moons, make_ring_splits
from .errors import ConfigError
from .model import MlpSpec
from .sampler import INIT_MODES, SamplerConfig
from .trainer import CE_TARGETS, OPTIMIZERS, TrainConfig

SCHEMA_VERSION = 1
ENV_SEED = "EBJD_SEED"
DATASET_KINDS = ("gaussian-ring", "moons", "csv", "idx")

_REQUIRED = object()

# Leaf schemas: key -> (type tag, default). _REQUIRED has no default.
_MODEL = {
    "hidden_dims": ("int_list", [64, 64]),
    "activation": ("str", "swish"),
}
_TRAIN = {
    "w1": ("float", 1.0),
    "w2": ("float", 1.0),
    "w3": ("float", 1.0),
    "lr": ("float", 0.01),
    "epochs": ("int", 10),
    "batch_size": ("int", 64),
    "m_theta": ("int", 1),
    "optimizer": ("str", "sgd"),
    "ce_target": ("str", "adv-only"),
}
_SAMPLER = {
    "steps": ("int", 20),
    "step_size": ("float", 0.1),
    "buffer_size": ("int", 1000),
    "reinit_prob": ("float", 0.05),
    "init_mode": ("str", "uniform-box"),
    "init_noise_sigma": ("float", 0.1),
    "domain_lo": ("float", -1.0),
    "domain_hi": ("float", 1.0),
}
_ATTACK = {
    "epsilon": ("float", 0.1),
    "steps": ("int", 5),
    "step_size": ("float_or_null", None),
    "add_noise": ("bool", False),
    "random_start": ("bool", True),
}
_DATASETS = {
    "gaussian-ring": {
        "kind": ("str", "gaussian-ring"),
        "k": ("int", 8),
        "n_train_per_class": ("int", 500),
        "n_test_per_class": ("int", 250),
        "radius": ("float", 0.7),
        "sigma": ("float", 0.08),
        "seed": ("int", 0),
    },
    "moons": {
        "kind": ("str", "moons"),
        "n_train": ("int", 1000),
        "n_test": ("int", 500),
        "noise_sigma": ("float", 0.1),
        "seed": ("int", 0),
    },
    "csv": {
        "kind": ("str", "csv"),
        "train_path": ("str", _REQUIRED),
        "test_path": ("str_or_null", None),
    },
    "idx": {
        "kind": ("str", "idx"),
        "train_images": ("str", _REQUIRED),
        "train_labels": ("str", _REQUIRED),
        "test_images": ("str_or_null", None),
        "test_labels": ("str_or_null", None),
        "max_n": ("int_or_null", None),
    },
}
_TOP = {
    "schema_version": ("int", SCHEMA_VERSION),
    "seed": ("int", 0),
    "out_dir": ("str", "run-out"),
    "model": ("section", _MODEL),
    "train": ("section", _TRAIN),
    "sampler": ("section", _SAMPLER),
    "attack": ("section", _ATTACK),
    "dataset": ("dataset", None),
}

_CHOICES = {
    "model.activation": ACTIVATIONS,
    "train.optimizer": OPTIMIZERS,
    "train.ce_target": CE_TARGETS,
    "sampler.init_mode": INIT_MODES,
    "dataset.kind": DATASET_KINDS,
}


def _coerce(value, tag: str, path: str):
    def fail(expected):
        raise ConfigError(f"{path}: expected {expected}, got {value!r}")

    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return int(value)
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        return float(value)
    if tag == "str":
        if not isinstance(value, str):
            fail("a string")
        return value
    if tag == "bool":
        if not isinstance(value, bool):
            fail("a boolean")
        return value
    if tag == "float_or_null":
        return None if value is None else _coerce(value, "float", path)
    if tag == "str_or_null":
        return None if value is None else _coerce(value, "str", path)
    if tag == "int_or_null":
        return None if value is None else _coerce(value, "int", path)
    if tag == "int_list":
        if (not isinstance(value, list) or not value
                or any(isinstance(v, bool) or not isinstance(v, int)
                       for v in value)):
            fail("a non-empty list of integers")
        return [int(v) for v in value]
    raise AssertionError(f"unhandled schema tag {tag}")


def _section(raw, schema: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    out = {}
    for key, (tag, default) in schema.items():
        leaf = f"{path}.{key}"
        if key in raw:
            out[key] = _coerce(raw[key], tag, leaf)
        elif default is _REQUIRED:
            raise ConfigError(f"{leaf}: required key is missing")
        else:
            out[key] = json.loads(json.dumps(default))
        if leaf in _CHOICES and out[key] not in _CHOICES[leaf]:
            raise ConfigError(
                f"{leaf}: {out[key]!r} is not one of {_CHOICES[leaf]}"
            )
    return out


def _dataset_section(raw, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = raw.get("kind", "gaussian-ring")
    if kind not in DATASET_KINDS:
        raise ConfigError(f"{path}.kind: {kind!r} is not one of {DATASET_KINDS}")
    return _section(raw, _DATASETS[kind], path)


def resolve_config(raw: dict, env: dict | None = None) -> dict:
    """Validate `raw`, materialize defaults, and stamp the mode label.

    The result is the config echo: a complete document that resolves to
    itself (minus the derived "mode" entry, which is recomputed).
    """
    if env is None:
        env = os.environ
    if not isinstance(raw, dict):
        raise ConfigError("config root: expected an object")
    raw = dict(raw)
    raw.pop("mode", None)  # derived; tolerated on input so echoes re-resolve
    unknown = sorted(set(raw) - set(_TOP))
    if unknown:
        raise ConfigError(f"config root: unknown key(s) {unknown}")

    out = {}
    for key, (tag, default) in _TOP.items():
        if tag == "section":
            out[key] = _section(raw.get(key, {}), default, key)
        elif tag == "dataset":
            out[key] = _dataset_section(raw.get(key, {}), key)
        elif key in raw:
            out[key] = _coerce(raw[key], tag, key)
        else:
            out[key] = default
    if out["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version: {out['schema_version']} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )

    if ENV_SEED in env:
        try:
            out["seed"] = int(env[ENV_SEED])
        except ValueError:
            raise ConfigError(
                f"{ENV_SEED}: {env[ENV_SEED]!r} is not an integer"
            ) from None

    out["mode"] = train_config(out).mode
    return out


def load_config(path: str, env: dict | None = None) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    return resolve_config(raw, env)


# -- object builders ---------------------------------------------------------


def train_config(doc: dict) -> TrainConfig:
    t, s, a = doc["train"], doc["sampler"], doc["attack"]
    seed = doc["seed"]
    return TrainConfig(
        w1=t["w1"], w2=t["w2"], w3=t["w3"], lr=t["lr"], epochs=t["epochs"],
        batch_size=t["batch_size"], m_theta=t["m_theta"],
        optimizer=t["optimizer"], ce_target=t["ce_target"], seed=seed,
        sampler=SamplerConfig(
            steps=s["steps"], step_size=s["step_size"],
            buffer_size=s["buffer_size"], reinit_prob=s["reinit_prob"],
            init_mode=s["init_mode"], init_noise_sigma=s["init_noise_sigma"],
            domain_lo=s["domain_lo"], domain_hi=s["domain_hi"], seed=seed,
        ),
        attack=attack_config(doc),
    )


def attack_config(doc: dict, epsilon: float | None = None,
                  steps: int | None = None) -> AttackConfig:
    """Attack settings from a config echo, with optional CLI overrides."""
    a, s = doc["attack"], doc["sampler"]
    return AttackConfig(
        epsilon=a["epsilon"] if epsilon is None else epsilon,
        steps=a["steps"] if steps is None else steps,
        step_size=a["step_size"], add_noise=a["add_noise"],
        random_start=a["random_start"],
        domain_lo=s["domain_lo"], domain_hi=s["domain_hi"], seed=doc["seed"],
    )


def mlp_spec(doc: dict, dim: int, k: int) -> MlpSpec:
    m = doc["model"]
    return MlpSpec((dim, *m["hidden_dims"], k),
                   activation=m["activation"], seed=doc["seed"])


def make_datasets(ds_doc: dict) -> tuple[Dataset, Dataset | None]:
    """Build (train, test) from a resolved dataset section.

    File-backed kinds may omit the test half; generated kinds always
    produce both splits.
    """
    kind = ds_doc["kind"]
    if kind == "gaussian-ring":
        return make_ring_splits(
            k=ds_doc["k"], n_train_per_class=ds_doc["n_train_per_class"],
            n_test_per_class=ds_doc["n_test_per_class"],
            radius=ds_doc["radius"], sigma=ds_doc["sigma"],
            seed=ds_doc["seed"],
        )
    if kind == "moons":
        train = make_moons(ds_doc["n_train"], ds_doc["noise_sigma"],
                           ds_doc["seed"], split="train")
        test = make_moons(ds_doc["n_test"], ds_doc["noise_sigma"],
                          ds_doc["seed"], split="test", norm=train.norm)
        return train, test
    if kind == "csv":
        train = load_csv(ds_doc["train_path"], split="train")
        test = None
        if ds_doc["test_path"] is not None:
            test = load_csv(ds_doc["test_path"], split="test")
        return train, test
    if kind == "idx":
        train = load_idx(ds_doc["train_images"], ds_doc["train_labels"],
                         max_n=ds_doc["max_n"])
        test = None
        if ds_doc["test_images"] is not None:
            if ds_doc["test_labels"] is None:
                raise ConfigError("dataset.test_labels: required with "
                                  "test_images")
            test = load_idx(ds_doc["test_images"], ds_doc["test_labels"],
                            max_n=ds_doc["max_n"], split="test")
        return train, test
    raise ConfigError(f"dataset.kind: unhandled kind {kind!r}")
