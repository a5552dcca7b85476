"""Bound estimates and the three gradient estimators.

For a batch ``x`` of ``B`` examples each example is replicated ``k`` times,
row ``b * k + i`` holding sample ``i`` of example ``b``. Gradients are
averaged over the ``B`` examples and ``bound`` is the mean per-example bound,
which is what one optimizer step on a minibatch consumes.

Noise is drawn from ``rng`` in a fixed order (eps for every layer, then one
uniform per example for the single-backward-pass variant) unless ``eps`` is
passed explicitly, in which case the arrays must have ``B * k`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import log_sum_exp, sample_categorical, softmax
from .model import ModelParams, backward_pass, draw_eps, forward_pass, take_rows

ESTIMATORS = ("vae", "iwae", "iwae_single")


@dataclass
class WeightSet:
    log_w: np.ndarray
    normalized: np.ndarray
    bound_contribution: float


def weight_set(log_w) -> WeightSet:
    log_w = np.asarray(log_w, dtype=np.float64)
    return WeightSet(log_w, softmax(log_w), log_sum_exp(log_w) - np.log(log_w.size))


@dataclass
class GradientEstimate:
    grads: ModelParams
    bound: float
    estimator_tag: str
    per_example_bounds: np.ndarray


def _prepare(params: ModelParams, x, k: int, rng, eps):
    if k < 1:
        raise ValueError("k must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    xb = x[None, :] if x.ndim == 1 else x
    rows = np.repeat(xb, k, axis=0)
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps is required")
        eps = draw_eps(params.arch, rows.shape[0], rng)
    fp = forward_pass(params, rows, eps)
    return xb.shape[0], fp, fp.log_w.reshape(xb.shape[0], k)


def iwae_bounds(log_w: np.ndarray) -> np.ndarray:
    """Per-row log-mean of importance weights for a ``(B, k)`` array."""
    return log_sum_exp(log_w, axis=1) - np.log(log_w.shape[1])


def estimate_bound(params: ModelParams, x, k: int, rng=None, eps=None):
    """One draw of the k-sample bound: ``log_sum_exp(log_w) - log k``."""
    _, _, log_w = _prepare(params, x, k, rng, eps)
    bounds = iwae_bounds(log_w)
    return float(bounds[0]) if np.ndim(x) == 1 else bounds


def vae_gradient(params: ModelParams, x, k: int, rng=None, eps=None) -> GradientEstimate:
    """Unweighted average of k per-sample log-weight gradients."""
    n_ex, fp, log_w = _prepare(params, x, k, rng, eps)
    coef = np.full(n_ex * k, 1.0 / (k * n_ex))
    grads = backward_pass(params, fp, coef, -coef)
    bounds = log_w.mean(axis=1)
    return GradientEstimate(grads, float(bounds.mean()), "vae", bounds)


def iwae_gradient(params: ModelParams, x, k: int, rng=None, eps=None) -> GradientEstimate:
    """Normalized-weight average of k per-sample log-weight gradients."""
    n_ex, fp, log_w = _prepare(params, x, k, rng, eps)
    coef = softmax(log_w, axis=1).ravel() / n_ex
    grads = backward_pass(params, fp, coef, -coef)
    bounds = iwae_bounds(log_w)
    return GradientEstimate(grads, float(bounds.mean()), "iwae", bounds)


def selected_sample_gradient(params: ModelParams, x, eps, index) -> GradientEstimate:
    """Gradient of the log weight of one chosen sample per example.

    ``index[b]`` picks sample ``index[b]`` of example ``b`` out of the ``k``
    rows described by ``eps``. Only the chosen rows are backpropagated.
    """
    x = np.asarray(x, dtype=np.float64)
    n_ex = 1 if x.ndim == 1 else x.shape[0]
    k = np.atleast_2d(eps[0]).shape[0] // n_ex
    n_ex, fp, log_w = _prepare(params, x, k, None, eps)
    return _selected(params, fp, log_w, np.atleast_1d(index))


def _selected(params, fp, log_w, index) -> GradientEstimate:
    n_ex, k = log_w.shape
    rows = np.arange(n_ex) * k + index
    sub = take_rows(fp, rows)
    coef = np.full(n_ex, 1.0 / n_ex)
    grads = backward_pass(params, sub, coef, -coef)
    bounds = iwae_bounds(log_w)
    return GradientEstimate(grads, float(bounds.mean()), "iwae_single", bounds)


def iwae_gradient_single(params: ModelParams, x, k: int, rng=None, eps=None) -> GradientEstimate:
    """k forward passes, then one backward pass through a sample drawn by normalized weight."""
    if rng is None:
        raise ValueError("rng is required for the categorical draw")
    n_ex, fp, log_w = _prepare(params, x, k, rng, eps)
    probs = softmax(log_w, axis=1)
    index = np.array([sample_categorical(rng, p) for p in probs])
    return _selected(params, fp, log_w, index)


GRADIENT_ESTIMATORS = {
    "vae": vae_gradient,
    "iwae": iwae_gradient,
    "iwae_single": iwae_gradient_single,
}
