"""Minibatch training loop with resumable state.

Every source of randomness is a pure function of the run seed and a counter,
except the estimator noise stream, whose state is saved in checkpoints:

* parameter initialization: ``SeedSequence([seed, 0])``
* pass ``p`` minibatch order: ``SeedSequence([seed, 1, p])``
* pass ``p`` binarization: ``SeedSequence([seed, 2, p])`` (``p = 0`` for
  every pass when the binarization is ``fixed``)
* estimator noise: ``SeedSequence([seed, 3])``, carried across passes

so a run resumed from any checkpoint, even mid-pass, replays the same
updates as an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import os
import time

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import RunConfig
from .data import ImageDataset, MinibatchIter, binarized
from .estimators import GRADIENT_ESTIMATORS
from .mathcore import make_rng
from .model import init_params
from .optim import AdamState, adam_step, schedule

log = logging.getLogger(__name__)

CONTINUE_LR = 1e-4
CONTINUE_PASSES = 3**7


def _stream(*key: int) -> np.random.Generator:
    return make_rng(np.random.SeedSequence(list(key)))


def fresh_checkpoint(config: RunConfig) -> Checkpoint:
    params = init_params(config.architecture(), _stream(config.seed, 0))
    return Checkpoint(
        config=config,
        params=params,
        adam=AdamState.zeros_for(params.arrays()),
        stages=schedule(config.stage_first, config.stage_last, config.pass_multiplier),
        counters={
            "stage": 0, "pass_in_stage": 0, "step_in_pass": 0,
            "global_pass": 0, "global_step": 0,
            "pass_bound_sum": 0.0, "pass_examples": 0,
        },
        rng_state=_stream(config.seed, 3).bit_generator.state,
    )


class Trainer:
    """Drives one checkpoint through its stage list.

    ``stage_numbers`` maps positions in ``ckpt.stages`` to schedule indices
    for logging and checkpoint names.
    """

    def __init__(self, ckpt: Checkpoint, train: ImageDataset, output_dir: str | None = None,
                 stage_numbers: list[int] | None = None):
        self.ckpt = ckpt
        self.train = train
        self.output_dir = output_dir
        self.stage_numbers = stage_numbers or list(range(len(ckpt.stages)))
        self.rng = np.random.Generator(np.random.PCG64())
        self.rng.bit_generator.state = ckpt.rng_state
        self._pass_data = None

    @property
    def done(self) -> bool:
        return self.ckpt.counters["stage"] >= len(self.ckpt.stages)

    def snapshot(self) -> Checkpoint:
        """The current state as a checkpoint (shares arrays with the trainer)."""
        self.ckpt.rng_state = self.rng.bit_generator.state
        return self.ckpt

    def _prepare_pass(self):
        cfg, c = self.ckpt.config, self.ckpt.counters
        p = c["global_pass"]
        order = MinibatchIter(len(self.train), _stream(cfg.seed, 1, p), cfg.batch_size)
        bin_pass = 0 if self.train.binarization == "fixed" else p
        x = binarized(self.train, _stream(cfg.seed, 2, bin_pass))
        self._pass_data = (list(order), x)

    def step(self) -> None:
        cfg, c = self.ckpt.config, self.ckpt.counters
        if self._pass_data is None:
            self._prepare_pass()
        batches, x = self._pass_data
        _, lr = self.ckpt.stages[c["stage"]]
        idx = batches[c["step_in_pass"]]
        est = GRADIENT_ESTIMATORS[cfg.objective](self.ckpt.params, x[idx], cfg.k, self.rng)
        adam_step(self.ckpt.adam, self.ckpt.params.arrays(), est.grads.arrays(), lr)
        c["pass_bound_sum"] += float(est.per_example_bounds.sum())
        c["pass_examples"] += len(idx)
        c["step_in_pass"] += 1
        c["global_step"] += 1

    def _finish_pass(self, started: float, metrics) -> None:
        c = self.ckpt.counters
        passes, lr = self.ckpt.stages[c["stage"]]
        record = {
            "pass": c["global_pass"],
            "stage": self.stage_numbers[c["stage"]],
            "lr": lr,
            "mean_bound": c["pass_bound_sum"] / max(c["pass_examples"], 1),
            "seconds": time.perf_counter() - started,
        }
        if metrics is not None:
            metrics.write(json.dumps(record) + "\n")
            metrics.flush()
        log.info("pass %(pass)d stage %(stage)d lr %(lr).3g bound %(mean_bound).4f", record)
        c.update(step_in_pass=0, pass_bound_sum=0.0, pass_examples=0)
        c["global_pass"] += 1
        c["pass_in_stage"] += 1
        self._pass_data = None
        if c["pass_in_stage"] >= passes:
            finished = self.stage_numbers[c["stage"]]
            c["stage"] += 1
            c["pass_in_stage"] = 0
            if self.output_dir:
                save_checkpoint(os.path.join(self.output_dir, f"stage{finished}.ckpt"), self.snapshot())

    def run(self, max_steps: int | None = None) -> Checkpoint:
        """Train until the stage list is exhausted or ``max_steps`` updates were made."""
        metrics = None
        if self.output_dir:
            os.makedirs(self.output_dir, exist_ok=True)
            metrics = open(os.path.join(self.output_dir, "metrics.jsonl"), "a")
        steps = 0
        started = time.perf_counter()
        try:
            while not self.done and (max_steps is None or steps < max_steps):
                if self._pass_data is None:
                    started = time.perf_counter()
                self.step()
                steps += 1
                if self.ckpt.counters["step_in_pass"] >= len(self._pass_data[0]):
                    self._finish_pass(started, metrics)
        finally:
            if metrics is not None:
                metrics.close()
        return self.snapshot()


def train(config: RunConfig, train_data: ImageDataset, output_dir: str | None = None) -> Checkpoint:
    ckpt = fresh_checkpoint(config)
    stage_numbers = list(range(config.stage_first, config.stage_last + 1))
    out = Trainer(ckpt, train_data, output_dir, stage_numbers).run()
    if output_dir:
        save_checkpoint(os.path.join(output_dir, "final.ckpt"), out)
    return out


def continuation(ckpt: Checkpoint, objective: str, k: int, passes: int = CONTINUE_PASSES) -> Checkpoint:
    """Swap the objective and set up ``passes`` more passes at lr 1e-4.

    Parameters and Adam moments carry over; pass counters keep increasing so
    the continuation sees fresh binarizations and orderings.
    """
    cfg = RunConfig.from_dict({**ckpt.config.to_dict(), "objective": objective, "k": k})
    counters = dict(ckpt.counters, stage=0, pass_in_stage=0, step_in_pass=0, pass_bound_sum=0.0, pass_examples=0)
    stages = [(passes, CONTINUE_LR)] if passes > 0 else []
    return Checkpoint(cfg, ckpt.params.copy(), AdamState(
        [m.copy() for m in ckpt.adam.m], [v.copy() for v in ckpt.adam.v],
        ckpt.adam.t, ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.eps,
    ), stages, counters, dict(ckpt.rng_state), "continue")
