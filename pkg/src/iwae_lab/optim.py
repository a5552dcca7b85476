"""Adam (gradient ascent form) and the staged learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import ShapeError

N_STAGES = 8
BASE_LR = 1e-3


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-4

    @classmethod
    def zeros_for(cls, arrays, **kwargs) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kwargs)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """One ascent step, updating ``params`` and ``state`` in place.

    theta <- theta + lr * m_hat / (sqrt(v_hat) + eps)
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("params, grads and optimizer state are not parallel")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p += lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def schedule_lr(stage: int) -> tuple[int, float]:
    """``(passes, lr)`` for stage ``i``: ``3**i`` passes at ``1e-3 * 10**(-i/7)``."""
    if not 0 <= stage < N_STAGES:
        raise ValueError(f"stage must be in 0..{N_STAGES - 1}, got {stage}")
    return 3**stage, BASE_LR * 10.0 ** (-stage / 7.0)


def schedule(first: int = 0, last: int = N_STAGES - 1, pass_multiplier: float = 1.0) -> list[tuple[int, float]]:
    """Stages ``first..last`` inclusive, pass counts scaled and rounded up."""
    out = []
    for i in range(first, last + 1):
        passes, lr = schedule_lr(i)
        out.append((max(1, int(np.ceil(passes * pass_multiplier))), lr))
    return out
