"""Run configuration: a flat ``key = value`` text file.

Blank lines and lines starting with ``#`` are ignored. Unknown keys are an
error. The ``IWAE_SEED`` environment variable, when set, replaces ``seed``.
See the README for the full key list.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .data import ImageDataset, load_dataset, synthetic_strokes
from .estimators import ESTIMATORS
from .mathcore import make_rng
from .model import ArchitectureSpec
from .optim import N_STAGES

BINARIZATIONS = ("stochastic", "fixed", "pre_binarized")


@dataclass
class RunConfig:
    train_data: str = "synthetic"
    test_data: str = "synthetic"
    binarization: str = "stochastic"
    train_subset: int | None = None
    test_subset: int | None = None
    synthetic_train: int = 1000
    synthetic_test: int = 500
    data_seed: int = 1234
    stochastic_dims: str = "50"
    deterministic_dims: str = "200,200"
    observation_dim: int = 784
    objective: str = "iwae"
    k: int = 50
    seed: int = 0
    batch_size: int = 20
    stage_first: int = 0
    stage_last: int = N_STAGES - 1
    pass_multiplier: float = 1.0
    k_eval: int = 5000
    eval_subset: int | None = None
    eval_seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.objective not in ESTIMATORS:
            raise ValueError(f"objective must be one of {ESTIMATORS}, got {self.objective!r}")
        if self.binarization not in BINARIZATIONS:
            raise ValueError(f"binarization must be one of {BINARIZATIONS}")
        if self.k < 1 or self.k_eval < 1 or self.batch_size < 1:
            raise ValueError("k, k_eval and batch_size must be at least 1")
        if not 0 <= self.stage_first <= self.stage_last < N_STAGES:
            raise ValueError(f"stage range must satisfy 0 <= first <= last < {N_STAGES}")
        if self.pass_multiplier <= 0:
            raise ValueError("pass_multiplier must be positive")
        self.architecture()

    def architecture(self) -> ArchitectureSpec:
        stoch = tuple(int(s) for s in self.stochastic_dims.split(","))
        gaps = tuple(tuple(int(w) for w in g.split(",") if w.strip()) for g in self.deterministic_dims.split(";"))
        return ArchitectureSpec(stoch, gaps, self.observation_dim)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            lines.append(f"{key} = {'none' if value is None else value}")
        return "\n".join(lines) + "\n"


def _coerce(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    kind = str(field.type)
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(fields[key], raw)
    if env.get("IWAE_SEED"):
        values["seed"] = int(env["IWAE_SEED"])
    return RunConfig(**values)


def load_config(path, env: dict | None = None) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read(), env)


def load_data(config: RunConfig) -> tuple[ImageDataset, ImageDataset]:
    """Training and test datasets described by the config."""
    if config.train_data == "synthetic":
        rng = make_rng(np.random.SeedSequence(config.data_seed))
        side = int(round(np.sqrt(config.observation_dim)))
        images = synthetic_strokes(config.synthetic_train + config.synthetic_test, rng, side=side)
        train = ImageDataset(images[: config.synthetic_train], "train", config.binarization)
        test = ImageDataset(images[config.synthetic_train :], "test", config.binarization)
    else:
        train = load_dataset(config.train_data, "train", config.binarization)
        test = load_dataset(config.test_data, "test", config.binarization)
    return train.subset(config.train_subset), test.subset(config.test_subset)
