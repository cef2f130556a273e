"""Versioned single-file checkpoints.

Layout (all integers little-endian)::

    b"RETEMPCK"            magic, 8 bytes
    uint32                 format version
    uint64                 header length in bytes
    header                 UTF-8 JSON: config, training metadata, section table, payload sha256
    payload                concatenated little-endian array sections

Each section entry records name, dtype, shape, offset and byte length within the
payload. Sections are ``param/<name>``, ``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from retemp.config import TrainConfig
from retemp.errors import CheckpointError, ConfigError
from retemp.optim import AdamState
from retemp.train import Checkpoint

MAGIC = b"RETEMPCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _le(arr: np.ndarray) -> np.ndarray:
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    arrays += [(f"param/{k}", v) for k, v in sorted(ckpt.params.items())]
    arrays += [(f"adam.m/{k}", v) for k, v in sorted(ckpt.optimizer.m.items())]
    arrays += [(f"adam.v/{k}", v) for k, v in sorted(ckpt.optimizer.v.items())]
    sections, chunks, offset = [], [], 0
    for name, arr in arrays:
        blob = np.ascontiguousarray(_le(arr)).tobytes()
        sections.append({"name": name, "dtype": _le(arr).dtype.str, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    payload = b"".join(chunks)
    opt = ckpt.optimizer
    header = {
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "val_history": ckpt.val_history,
        "losses": ckpt.losses,
        "num_entities": ckpt.num_entities,
        "num_relations": ckpt.num_relations,
        "num_snapshots": ckpt.num_snapshots,
        "optimizer": {"step": opt.step, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                      "eps": opt.eps},
        "sections": sections,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + payload)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint (no header)")
    magic, version, head_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic bytes)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} unsupported "
                              f"(expected {FORMAT_VERSION})")
    body = _PREFIX.size + head_len
    if len(raw) < body:
        raise CheckpointError(f"{path}: truncated checkpoint (header cut short)")
    try:
        header = json.loads(raw[_PREFIX.size:body].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt checkpoint header") from None
    payload = raw[body:]
    expected = sum(s["nbytes"] for s in header["sections"])
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, expected {expected} "
                              "(truncated or corrupt)")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")

    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam.m": {}, "adam.v": {}}
    for sec in header["sections"]:
        kind, name = sec["name"].split("/", 1)
        chunk = payload[sec["offset"]:sec["offset"] + sec["nbytes"]]
        arr = np.frombuffer(chunk, dtype=np.dtype(sec["dtype"])).reshape(sec["shape"])
        groups[kind][name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    try:
        config = TrainConfig.from_dict(header["config"])
    except ConfigError as exc:
        raise CheckpointError(f"{path}: invalid embedded config: {exc}") from None
    o = header["optimizer"]
    opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"],
                    m=groups["adam.m"], v=groups["adam.v"])
    return Checkpoint(config=config, params=groups["param"], optimizer=opt, epoch=header["epoch"],
                      val_history=header["val_history"], num_entities=header["num_entities"],
                      num_relations=header["num_relations"],
                      num_snapshots=header["num_snapshots"], losses=header.get("losses", []))


def check_dataset(ckpt: Checkpoint, num_entities: int, num_relations: int,
                  num_snapshots: int) -> None:
    """Raise if the checkpoint was trained on a dataset of different shape."""
    want = {"num_entities": num_entities, "num_relations": num_relations,
            "num_snapshots": num_snapshots}
    have = {k: getattr(ckpt, k) for k in want}
    diffs = [f"{k}: checkpoint {have[k]} vs dataset {want[k]}" for k in want if have[k] != want[k]]
    if diffs:
        raise CheckpointError("checkpoint/dataset mismatch (" + "; ".join(diffs) + ")")
