"""Versioned binary checkpoints.

Layout, all integers little-endian::

    8 bytes   magic b"IWAECKPT"
    uint32    format version
    uint64    header length H in bytes
    H bytes   UTF-8 JSON header (sorted keys, no whitespace)
    ...       float64 little-endian tensor data, concatenated

The header holds the run config, the stage list, training counters, Adam
scalars, the estimator RNG state and a tensor table of
``{"name", "shape", "offset"}`` entries, where ``offset`` counts float64
values from the start of the data section. Tensor names are
``param/<name>``, ``adam_m/<name>`` and ``adam_v/<name>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .model import ModelParams, init_params
from .optim import AdamState

MAGIC = b"IWAECKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    params: ModelParams
    adam: AdamState
    stages: list[tuple[int, float]]
    counters: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    phase: str = "train"


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    names = [n for n, _ in ckpt.params.named_arrays()]
    tensors = (
        [(f"param/{n}", a) for n, a in ckpt.params.named_arrays()]
        + [(f"adam_m/{n}", a) for n, a in zip(names, ckpt.adam.m)]
        + [(f"adam_v/{n}", a) for n, a in zip(names, ckpt.adam.v)]
    )
    table, offset = [], 0
    for name, arr in tensors:
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "version": FORMAT_VERSION,
        "phase": ckpt.phase,
        "config": ckpt.config.to_dict(),
        "stages": [[int(p), float(lr)] for p, lr in ckpt.stages],
        "counters": ckpt.counters,
        "rng_state": ckpt.rng_state,
        "adam": {"t": ckpt.adam.t, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps},
        "tensors": table,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as f:
        head = f.read(20)
        if len(head) < 20 or head[:8] != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        version, length = struct.unpack("<IQ", head[8:20])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
        return json.loads(f.read(length).decode("utf-8"))


def load_checkpoint(path) -> Checkpoint:
    header = read_header(path)
    with open(path, "rb") as f:
        raw = f.read()
    data_start = 20 + struct.unpack("<Q", raw[12:20])[0]
    data = np.frombuffer(raw, dtype="<f8", offset=data_start)

    config = RunConfig.from_dict(header["config"])
    # architecture only: the values are overwritten from the tensor table
    params = init_params(config.architecture(), np.random.default_rng(0))
    by_name = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        chunk = data[entry["offset"] : entry["offset"] + n]
        if chunk.size != n:
            raise CheckpointError(f"tensor {entry['name']} is truncated")
        by_name[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)

    def fill(prefix):
        out = []
        for name, arr in params.named_arrays():
            key = f"{prefix}/{name}"
            if key not in by_name or by_name[key].shape != arr.shape:
                raise CheckpointError(f"missing or misshapen tensor {key}")
            out.append(by_name[key])
        return out

    for dst, src in zip(params.arrays(), fill("param")):
        dst[...] = src
    a = header["adam"]
    adam = AdamState(fill("adam_m"), fill("adam_v"), a["t"], a["beta1"], a["beta2"], a["eps"])
    stages = [(int(p), float(lr)) for p, lr in header["stages"]]
    return Checkpoint(config, params, adam, stages, header["counters"], header["rng_state"], header["phase"])
