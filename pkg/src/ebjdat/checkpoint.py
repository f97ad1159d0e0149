"""Binary run snapshots: everything a resumed run needs, byte-stable.

Container layout: magic ``EBJD``, little-endian u32 schema version, u32
section count, then named length-prefixed sections in a fixed order.
Arrays travel as raw little-endian float64, row major; structured values
(config echo, rng states, progress counters, step log) travel as canonical
JSON. Saving a loaded checkpoint reproduces the input bytes exactly, which
is what makes "resume equals continuous run" checkable at the file level.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError
from .model import EnergyModel, MlpSpec, Params
from .report import canonical_json
from .sampler import ReplayBuffer
from .trainer import LogRow, TrainConfig, TrainState, make_optimizer

MAGIC = b"EBJD"
SCHEMA_VERSION = 1

# Canonical section order; load rejects anything missing or unexpected.
_SECTIONS = ("config", "spec", "params", "buffer", "rng", "progress",
             "optim", "optim_arrays", "log")


@dataclass
class Checkpoint:
    """In-memory image of one saved training state."""

    config: dict
    spec: MlpSpec
    params: list[tuple[str, np.ndarray]]
    buffer_entries: np.ndarray
    rng_states: dict
    progress: dict
    optim_meta: dict
    optim_arrays: list[tuple[str, np.ndarray]]
    log: list[LogRow] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION


def from_state(state: TrainState, config_echo: dict | None = None) -> Checkpoint:
    """Snapshot a live training state (arrays are copied, not aliased)."""
    optim_arrays = []
    if hasattr(state.optimizer, "moment_arrays"):
        optim_arrays = [(n, a.copy())
                        for n, a in state.optimizer.moment_arrays().items()]
    return Checkpoint(
        config=dict(config_echo or {}),
        spec=state.model.spec,
        params=[(n, t.data.copy()) for n, t in state.model.params],
        buffer_entries=state.buffer.entries.copy(),
        rng_states={"buffer": state.buffer.rng.bit_generator.state,
                    "attack": state.attack_rng.bit_generator.state},
        progress={"epoch": state.epoch,
                  "consecutive_divergences": state.consecutive_divergences},
        optim_meta=state.optimizer.state_dict(),
        optim_arrays=optim_arrays,
        log=[LogRow(**vars(row)) for row in state.log],
    )


def to_state(ck: Checkpoint, cfg: TrainConfig) -> TrainState:
    """Rebuild a training state that continues bit-for-bit from `ck`."""
    params = Params([(n, Tensor(a.copy(), requires_grad=True))
                     for n, a in ck.params])
    model = EnergyModel(ck.spec, params)
    buffer = ReplayBuffer(ck.buffer_entries.copy(),
                          _generator_from(ck.rng_states["buffer"]))
    optimizer = make_optimizer(cfg.optimizer, model.params, cfg.lr)
    if ck.optim_meta.get("kind") != optimizer.kind:
        raise CheckpointError(
            f"checkpoint optimizer {ck.optim_meta.get('kind')!r} does not "
            f"match config optimizer {optimizer.kind!r}"
        )
    optimizer.load_state(ck.optim_meta, dict(ck.optim_arrays))
    return TrainState(
        cfg=cfg, model=model, buffer=buffer, optimizer=optimizer,
        attack_rng=_generator_from(ck.rng_states["attack"]),
        epoch=int(ck.progress["epoch"]),
        consecutive_divergences=int(ck.progress["consecutive_divergences"]),
        log=[LogRow(**vars(row)) for row in ck.log],
    )


def model_from(ck: Checkpoint) -> EnergyModel:
    """Just the network, for evaluation-only commands."""
    params = Params([(n, Tensor(a.copy(), requires_grad=True))
                     for n, a in ck.params])
    return EnergyModel(ck.spec, params)


def _generator_from(state: dict) -> np.random.Generator:
    name = str(state.get("bit_generator", ""))
    cls = getattr(np.random, name, None)
    if cls is None:
        raise CheckpointError(f"unknown bit generator {name!r}")
    bg = cls()
    bg.state = state
    return np.random.Generator(bg)


# -- binary encoding ----------------------------------------------------------


def _pack_arrays(arrays: list[tuple[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


class _Reader:
    """Cursor over a byte string that raises on short reads."""

    def __init__(self, payload: bytes, context: str):
        self.payload = payload
        self.pos = 0
        self.context = context

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.payload):
            raise CheckpointError(f"truncated checkpoint ({self.context})")
        chunk = self.payload[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.payload)


def _unpack_arrays(payload: bytes, context: str) -> list[tuple[str, np.ndarray]]:
    r = _Reader(payload, context)
    arrays = []
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u64() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
        arrays.append((name, data.copy()))
    if not r.done():
        raise CheckpointError(f"trailing bytes in {context} section")
    return arrays


def _json_bytes(obj) -> bytes:
    return canonical_json(obj).encode("utf-8")


def _json_section(payload: bytes, context: str):
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable {context} section: {err}") from err


def _log_rows_to_lists(log: list[LogRow]) -> list[list]:
    return [[r.epoch, r.l_gen, r.l_adv_gap, r.l_ce, r.total,
             r.clean_acc, r.gap_mean, r.gap_var, bool(r.diverged)]
            for r in log]


def save_checkpoint(ck: Checkpoint, path: str) -> None:
    """Write the container atomically (temp file + rename)."""
    spec = ck.spec
    sections = {
        "config": _json_bytes(ck.config),
        "spec": _json_bytes({"layer_dims": list(spec.layer_dims),
                             "activation": spec.activation,
                             "seed": spec.seed}),
        "params": _pack_arrays(ck.params),
        "buffer": _pack_arrays([("entries", ck.buffer_entries)]),
        "rng": _json_bytes(ck.rng_states),
        "progress": _json_bytes(ck.progress),
        "optim": _json_bytes(ck.optim_meta),
        "optim_arrays": _pack_arrays(ck.optim_arrays),
        "log": _json_bytes(_log_rows_to_lists(ck.log)),
    }
    blob = [MAGIC, struct.pack("<I", ck.schema_version),
            struct.pack("<I", len(_SECTIONS))]
    for name in _SECTIONS:
        raw = name.encode("utf-8")
        payload = sections[name]
        blob.append(struct.pack("<I", len(raw)))
        blob.append(raw)
        blob.append(struct.pack("<Q", len(payload)))
        blob.append(payload)
    data = b"".join(blob)

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, "header")
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: schema version {version} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    n_sections = r.u32()
    r.context = "sections"
    payloads: dict[str, bytes] = {}
    for _ in range(n_sections):
        name = r.take(r.u32()).decode("utf-8")
        if name not in _SECTIONS or name in payloads:
            raise CheckpointError(f"{path}: unexpected section {name!r}")
        payloads[name] = r.take(r.u64())
    if not r.done():
        raise CheckpointError(f"{path}: trailing bytes after last section")
    missing = [n for n in _SECTIONS if n not in payloads]
    if missing:
        raise CheckpointError(f"{path}: missing sections {missing}")

    spec_doc = _json_section(payloads["spec"], "spec")
    spec = MlpSpec(tuple(spec_doc["layer_dims"]),
                   activation=spec_doc["activation"],
                   seed=int(spec_doc["seed"]))
    buffer_arrays = dict(_unpack_arrays(payloads["buffer"], "buffer"))
    if set(buffer_arrays) != {"entries"}:
        raise CheckpointError(f"{path}: malformed buffer section")
    log = [LogRow(int(e), lg, la, lc, tot, acc, gm, gv, bool(d))
           for e, lg, la, lc, tot, acc, gm, gv, d
           in _json_section(payloads["log"], "log")]
    return Checkpoint(
        config=_json_section(payloads["config"], "config"),
        spec=spec,
        params=_unpack_arrays(payloads["params"], "params"),
        buffer_entries=buffer_arrays["entries"],
        rng_states=_json_section(payloads["rng"], "rng"),
        progress=_json_section(payloads["progress"], "progress"),
        optim_meta=_json_section(payloads["optim"], "optim"),
        optim_arrays=_unpack_arrays(payloads["optim_arrays"], "optim_arrays"),
        log=log,
        schema_version=version,
    )
