"""Command-line entry points: train, eval, sample, report, attack.

Every command is a pure function of (config echo, seed, input files): rerun
it and the output bytes repeat. Exit codes: 0 success, 2 bad configuration
or input, 3 training aborted after repeated divergence, 4 checkpoint
incompatibility.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .adversary import AttackConfig, pgd_ce_attack
from .checkpoint import Checkpoint, from_state, load_checkpoint, model_from, save_checkpoint, to_state
from .config import attack_config, load_config, make_datasets, mlp_spec, resolve_config, train_config
from .data import Dataset, export_csv, load_csv
from .errors import CheckpointError, ConfigError, EbjdatError, TrainingAborted
from .model import EnergyModel
from .report import (
    accuracy,
    canonical_json,
    energy_histograms,
    mmd_rbf,
    one_to_one_energy_gap,
    report_export,
)
from .sampler import SamplerConfig, informative_init, sgld_step
from .trainer import TrainState, fit, write_log_csv

_EVAL_STREAM = 66
_SAMPLE_STREAM = 77


# -- shared helpers -----------------------------------------------------------


def _load_eval_data(path: str) -> Dataset:
    """--data accepts a .json dataset spec (its test split) or a .csv file."""
    if path.endswith(".json"):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read dataset spec {path}: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path} is not valid JSON: {err}") from err
        doc = resolve_config({"dataset": raw}, env={})
        _, test = make_datasets(doc["dataset"])
        if test is None:
            raise ConfigError(f"{path}: dataset spec has no test split")
        return test
    if path.endswith(".csv"):
        return load_csv(path, split="test")
    raise ConfigError(f"--data expects a .json dataset spec or .csv file, "
                      f"got {path!r}")


def _checkpoint_setup(args) -> tuple[Checkpoint, EnergyModel, dict]:
    ck = load_checkpoint(args.ckpt)
    model = model_from(ck)
    doc = resolve_config(ck.config, env={})
    return ck, model, doc


def _eval_attack(doc: dict, args) -> AttackConfig:
    return attack_config(doc, epsilon=args.eps, steps=args.steps)


def _adversarial_batch(model, ds: Dataset, atk: AttackConfig) -> np.ndarray:
    rng = np.random.default_rng([atk.seed, _EVAL_STREAM])
    return pgd_ce_attack(model, ds.x, ds.y, atk, rng)


def _draw_samples(model, doc: dict, n: int, init: str, steps: int,
                  train_x: np.ndarray | None) -> np.ndarray:
    """Fresh SGLD chains from the requested initialization."""
    s = doc["sampler"]
    cfg = SamplerConfig(
        steps=steps, step_size=s["step_size"], buffer_size=s["buffer_size"],
        reinit_prob=s["reinit_prob"], init_mode=s["init_mode"],
        init_noise_sigma=s["init_noise_sigma"], domain_lo=s["domain_lo"],
        domain_hi=s["domain_hi"], seed=doc["seed"],
    )
    rng = np.random.default_rng([doc["seed"], _SAMPLE_STREAM])
    if init == "uniform":
        x = rng.uniform(cfg.domain_lo, cfg.domain_hi,
                        size=(n, model.spec.input_dim))
    else:
        if train_x is None:
            raise ConfigError("informative initialization needs the training "
                              "data recorded in the checkpoint config")
        x = informative_init(train_x, n, cfg.init_noise_sigma, rng,
                             cfg.domain_lo, cfg.domain_hi)
    for _ in range(steps):
        x = sgld_step(model, x, cfg, rng)
    return x


def _write_samples_csv(x: np.ndarray, path: str) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(x.shape[1])])
        for row in x:
            writer.writerow([repr(float(v)) for v in row])


# -- commands -----------------------------------------------------------------


def cmd_train(args) -> int:
    doc = load_config(args.config)
    out_dir = doc["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(canonical_json(doc))

    train_ds, _ = make_datasets(doc["dataset"])
    cfg = train_config(doc)
    spec = mlp_spec(doc, train_ds.dim, train_ds.k)

    if args.resume:
        ck = load_checkpoint(args.resume)
        # Keys that shape the training math must match; the output
        # directory and the epoch budget are free to change.
        stale = {k: v for k, v in ck.config.items()
                 if k not in ("train", "out_dir") and doc.get(k) != v}
        stale.update({f"train.{k}": v for k, v in
                      ck.config.get("train", {}).items()
                      if k != "epochs" and doc["train"].get(k) != v})
        if stale:
            raise CheckpointError(
                f"resume config mismatch on {sorted(stale)}; only "
                f"out_dir and train.epochs may change between runs"
            )
        state = to_state(ck, cfg)
        print(f"resuming at epoch {state.epoch}")
    else:
        state = TrainState.initialize(cfg, train_ds.dim, train_ds.k, spec)

    log_path = os.path.join(out_dir, "training_log.csv")

    def on_epoch_end(st):
        save_checkpoint(from_state(st, doc),
                        os.path.join(out_dir, f"ckpt-ep{st.epoch:03d}.ebjd"))
        write_log_csv(st.log, log_path)
        last = st.log[-1]
        print(f"epoch {st.epoch}/{cfg.epochs} total={last.total:.4f} "
              f"acc={last.clean_acc:.4f} gap={last.gap_mean:.4f}")

    try:
        fit(cfg, train_ds, state=state, on_epoch_end=on_epoch_end)
    finally:
        save_checkpoint(from_state(state, doc),
                        os.path.join(out_dir, "ckpt-final.ebjd"))
        write_log_csv(state.log, log_path)
    print(f"done: mode={doc['mode']} epochs={state.epoch} -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    _, model, doc = _checkpoint_setup(args)
    ds = _load_eval_data(args.data)
    atk = _eval_attack(doc, args)
    x_adv = _adversarial_batch(model, ds, atk)
    gap_mean, gap_var = one_to_one_energy_gap(model, ds.x, x_adv)
    metrics = {
        "acc": accuracy(model, ds),
        "robust_acc": float((model.predict(x_adv) == ds.y).mean()),
        "gap_mean": gap_mean,
        "gap_var": gap_var,
    }
    text = canonical_json(metrics)
    print(text, end="")
    with open(args.out, "w") as fh:
        fh.write(text)
    return 0


def cmd_sample(args) -> int:
    ck, model, doc = _checkpoint_setup(args)
    train_x = None
    if args.init == "informative":
        train_ds, _ = make_datasets(doc["dataset"])
        train_x = train_ds.x
    x = _draw_samples(model, doc, args.n, args.init, args.steps, train_x)
    _write_samples_csv(x, args.out)
    print(f"wrote {len(x)} samples -> {args.out}")
    return 0


def cmd_report(args) -> int:
    ck, model, doc = _checkpoint_setup(args)
    ds = _load_eval_data(args.data)
    atk = _eval_attack(doc, args)
    x_adv = _adversarial_batch(model, ds, atk)

    train_x = None
    if args.init == "informative":
        train_ds, _ = make_datasets(doc["dataset"])
        train_x = train_ds.x
    n_gen = args.n_gen if args.n_gen is not None else ds.n
    gen = _draw_samples(model, doc, n_gen, args.init, args.sample_steps,
                        train_x)

    rep = energy_histograms(model, ds.x, x_adv, gen, bins=args.bins,
                            y_clean=ds.y, y_adv=ds.y, config=doc)
    rep.metrics["acc"] = accuracy(model, ds)
    rep.metrics["robust_acc"] = float((model.predict(x_adv) == ds.y).mean())
    rep.metrics["mmd_gen"] = mmd_rbf(gen, ds.x)
    report_export(rep, args.out)
    print(f"gap_mean={rep.gap_mean:.4f} overlap={rep.overlap_clean_adv:.4f} "
          f"mmd_gen={rep.metrics['mmd_gen']:.6f} -> {args.out}")
    return 0


def cmd_attack(args) -> int:
    _, model, doc = _checkpoint_setup(args)
    ds = _load_eval_data(args.data)
    atk = _eval_attack(doc, args)
    x_adv = _adversarial_batch(model, ds, atk)
    export_csv(Dataset(x_adv, ds.y, k=ds.k, split="test", norm=ds.norm),
               args.out)
    robust = float((model.predict(x_adv) == ds.y).mean())
    print(f"wrote {len(x_adv)} adversarial rows -> {args.out} "
          f"(robust_acc={robust:.4f})")
    return 0


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ebjdat",
        description="Energy-based joint training of robust classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run or resume a training job")
    p.add_argument("--config", required=True, help="path to a JSON run config")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    def eval_flags(p, with_out=None):
        p.add_argument("--ckpt", required=True, help="checkpoint file")
        p.add_argument("--data", required=True,
                       help=".json dataset spec or .csv data file")
        p.add_argument("--eps", type=float, default=None,
                       help="attack radius (default: checkpoint config)")
        p.add_argument("--steps", type=int, default=None,
                       help="attack steps (default: checkpoint config)")
        if with_out:
            p.add_argument("--out", default=with_out, help="output path")

    p = sub.add_parser("eval", help="clean/robust accuracy and energy gap")
    eval_flags(p, with_out="eval.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw SGLD samples from a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--init", choices=("uniform", "informative"),
                   default="uniform", help="chain initialization")
    p.add_argument("--steps", type=int, default=100, help="SGLD steps")
    p.add_argument("--out", default="samples.csv", help="output CSV")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("report", help="energy histograms and metrics")
    eval_flags(p, with_out="report.json")
    p.add_argument("--bins", type=int, default=40, help="histogram bins")
    p.add_argument("--init", choices=("uniform", "informative"),
                   default="uniform", help="generation initialization")
    p.add_argument("--sample-steps", type=int, default=100,
                   help="SGLD steps for the generated population")
    p.add_argument("--n-gen", type=int, default=None,
                   help="generated sample count (default: dataset size)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("attack", help="write adversarial examples as CSV")
    eval_flags(p)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_attack)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingAborted as err:
        print(f"training aborted: repeated divergence at epoch {err.epoch}",
              file=sys.stderr)
        return 3
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return 4
    except EbjdatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
