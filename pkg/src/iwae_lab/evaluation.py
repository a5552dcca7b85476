"""Held-out likelihood, latent activity, ablation and a closed-form oracle."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import ImageDataset, binarized
from .mathcore import DomainError, log_sum_exp, make_rng
from .model import ModelParams, draw_eps, forward_pass, recognition_means
from .prob import DiagGaussian, gaussian_log_pdf, reparam_sample, standard_normal_log_pdf

ACTIVITY_THRESHOLD = 1e-2
REPORT_SCHEMA_VERSION = 1
MAX_ROWS = 5000


@dataclass
class NllReport:
    mean_nll: float
    k_eval: int
    per_example_bounds: np.ndarray
    eval_seed: int | None
    split_tag: str = "test"

    @property
    def stderr(self) -> float:
        n = self.per_example_bounds.size
        return float(np.std(self.per_example_bounds, ddof=1) / np.sqrt(n)) if n > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "schema": "iwae-lab/nll-report",
            "version": REPORT_SCHEMA_VERSION,
            "mean_nll": self.mean_nll,
            "stderr": self.stderr,
            "k_eval": self.k_eval,
            "n_examples": int(self.per_example_bounds.size),
            "eval_seed": self.eval_seed,
            "split": self.split_tag,
            "per_example_bounds": self.per_example_bounds.tolist(),
        }

    def to_text(self) -> str:
        lines = [
            f"{'field':<12} value",
            f"{'split':<12} {self.split_tag}",
            f"{'k_eval':<12} {self.k_eval}",
            f"{'n_examples':<12} {self.per_example_bounds.size}",
            f"{'eval_seed':<12} {self.eval_seed}",
            f"{'mean_nll':<12} {self.mean_nll:.6f}",
            f"{'stderr':<12} {self.stderr:.6f}",
        ]
        return "\n".join(lines) + "\n"


@dataclass
class ActivityReport:
    A_u: list[np.ndarray]
    threshold: float = ACTIVITY_THRESHOLD
    split_tag: str = "test"
    n_examples: int = 0
    active_mask: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        self.active_mask = [a > self.threshold for a in self.A_u]

    @property
    def active_counts(self) -> list[int]:
        return [int(m.sum()) for m in self.active_mask]

    @property
    def label(self) -> str:
        """Active units per layer in the ``k1+k2`` style."""
        return "+".join(str(c) for c in self.active_counts)

    def to_dict(self) -> dict:
        return {
            "schema": "iwae-lab/activity-report",
            "version": REPORT_SCHEMA_VERSION,
            "threshold": self.threshold,
            "split": self.split_tag,
            "n_examples": self.n_examples,
            "active_counts": self.active_counts,
            "A_u": [a.tolist() for a in self.A_u],
        }

    def to_text(self) -> str:
        lines = [f"{'layer':<6} {'unit':<6} {'A_u':<14} active"]
        for l, (a, m) in enumerate(zip(self.A_u, self.active_mask), 1):
            for u, (val, act) in enumerate(zip(a, m)):
                lines.append(f"{l:<6} {u:<6} {val:<14.6e} {int(act)}")
        lines.append(f"# active units: {self.label} (threshold {self.threshold:g}, split {self.split_tag})")
        return "\n".join(lines) + "\n"


def write_report(report, stem) -> tuple[str, str]:
    """Write ``<stem>.txt`` and ``<stem>.json``; returns both paths."""
    txt, js = f"{stem}.txt", f"{stem}.json"
    with open(txt, "w") as f:
        f.write(report.to_text())
    with open(js, "w") as f:
        json.dump(report.to_dict(), f, indent=1)
    return txt, js


def _binary_images(data, rng) -> tuple[np.ndarray, str]:
    if isinstance(data, ImageDataset):
        return binarized(data, rng), data.split_tag
    return np.asarray(data, dtype=np.float64), "test"


def example_bounds(params: ModelParams, x_binary: np.ndarray, k: int, rng: np.random.Generator,
                   max_rows: int = MAX_ROWS) -> np.ndarray:
    """k-sample bound per example, with memory bounded by ``max_rows`` rows.

    Noise is drawn per example in a fixed order, so the result does not
    depend on ``max_rows``: chunk-level log-sum-exps are merged exactly.
    """
    out = np.empty(x_binary.shape[0])
    per_block = max(1, max_rows // k)
    for start in range(0, x_binary.shape[0], per_block):
        block = x_binary[start : start + per_block]
        eps_parts = [draw_eps(params.arch, k, rng) for _ in range(block.shape[0])]
        if block.shape[0] * k <= max_rows:
            eps = [np.concatenate([e[l] for e in eps_parts]) for l in range(params.arch.n_layers)]
            log_w = forward_pass(params, np.repeat(block, k, axis=0), eps).log_w.reshape(-1, k)
            out[start : start + block.shape[0]] = log_sum_exp(log_w, axis=1) - np.log(k)
            continue
        # a single example larger than one chunk
        eps = eps_parts[0]
        lses = []
        for c in range(0, k, max_rows):
            chunk = [e[c : c + max_rows] for e in eps]
            n = chunk[0].shape[0]
            lw = forward_pass(params, np.repeat(block, n, axis=0), chunk).log_w
            lses.append(log_sum_exp(lw))
        out[start] = log_sum_exp(np.array(lses)) - np.log(k)
    return out


def evaluate_nll(params: ModelParams, data, k_eval: int = 5000, seed: int = 0,
                 max_rows: int = MAX_ROWS) -> NllReport:
    """Mean negated k_eval-sample bound over a dataset.

    A stochastically binarized dataset is binarized once, from the first
    child stream of ``seed``; importance samples use the second.
    """
    if k_eval < 1:
        raise ValueError("k_eval must be at least 1")
    bin_rng, sample_rng = (make_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    x, split = _binary_images(data, bin_rng)
    bounds = example_bounds(params, x, k_eval, sample_rng, max_rows)
    return NllReport(float(-bounds.mean()), k_eval, bounds, seed, split)


def unit_activity(params: ModelParams, data, n_eval: int | None = None, seed: int = 0,
                  threshold: float = ACTIVITY_THRESHOLD) -> ActivityReport:
    """Variance across examples of each latent unit's posterior mean.

    Layer-2 means are taken at the layer-1 posterior means. The variance uses
    the ``n - 1`` divisor.
    """
    x, split = _binary_images(data, make_rng(np.random.SeedSequence(seed).spawn(1)[0]))
    if n_eval is not None:
        x = x[:n_eval]
    if x.shape[0] < 2:
        raise ValueError("need at least two examples to measure activity")
    means = recognition_means(params, x)
    A_u = [np.var(m, axis=0, ddof=1) for m in means]
    return ActivityReport(A_u, threshold, split, x.shape[0])


def _first_layer(block, head):
    return block.layers[0] if block.layers else head


def ablate_inactive(params: ModelParams, report: ActivityReport, threshold: float | None = None) -> ModelParams:
    """Copy of ``params`` with every unit whose A_u <= threshold pinned.

    A pinned unit has q(u | .) = N(0, 1), matching p(u | .) = N(0, 1), and
    nothing downstream reads it, so its log-weight contribution is exactly
    zero. ``threshold`` defaults to the report's activity threshold.
    """
    thr = report.threshold if threshold is None else threshold
    out = params.copy()
    L = params.arch.n_layers
    for l, a in enumerate(report.A_u):
        dead = np.flatnonzero(a <= thr)
        if dead.size == a.size:
            raise ValueError(f"layer {l + 1} has no active units; refusing to ablate it")
        if dead.size == 0:
            continue
        rec = out.recognition[l]
        for head in (rec.mean_head, rec.logvar_head):
            head.weight[dead] = 0.0
            head.bias[dead] = 0.0
        if l + 1 < L:
            nxt = out.recognition[l + 1]
            _first_layer(nxt.trunk, nxt.mean_head).weight[:, dead] = 0.0
            if not nxt.trunk.layers:
                nxt.logvar_head.weight[:, dead] = 0.0
            prior = out.generative[l]
            for head in (prior.mean_head, prior.logvar_head):
                head.weight[dead] = 0.0
                head.bias[dead] = 0.0
        consumer = out.decoder if l == 0 else out.generative[l - 1]
        _first_layer(consumer.trunk, consumer.mean_head).weight[:, dead] = 0.0
        if l > 0 and not consumer.trunk.layers:
            consumer.logvar_head.weight[:, dead] = 0.0
    return out


@dataclass
class LinearGaussianOracle:
    """p(h) = N(0, I), p(x | h) = N(W h + b, obs_std^2 I)."""

    W: np.ndarray  # (D, d)
    b: np.ndarray  # (D,)
    obs_std: float

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if not self.obs_std > 0:
            raise DomainError("obs_std must be positive")

    @property
    def covariance(self) -> np.ndarray:
        return self.W @ self.W.T + self.obs_std**2 * np.eye(self.b.size)

    def posterior(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Exact posterior mean and covariance of h given x."""
        x = np.asarray(x, dtype=np.float64)
        prec = np.eye(self.W.shape[1]) + self.W.T @ self.W / self.obs_std**2
        cov = np.linalg.inv(prec)
        return cov @ self.W.T @ (x - self.b) / self.obs_std**2, cov

    def log_joint(self, x, h) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        obs = DiagGaussian(h @ self.W.T + self.b, np.full(h.shape[:-1] + self.b.shape, self.obs_std))
        return standard_normal_log_pdf(h) + gaussian_log_pdf(obs, x)

    def log_weights(self, x, q: DiagGaussian, eps) -> np.ndarray:
        h = reparam_sample(q, eps)
        return self.log_joint(x, h) - gaussian_log_pdf(q, h)


def oracle_log_marginal(oracle: LinearGaussianOracle, x) -> float:
    """Exact log N(x; b, W W^T + obs_std^2 I) via a Cholesky factor."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != oracle.b.shape:
        raise ValueError(f"x has shape {x.shape}, expected {oracle.b.shape}")
    try:
        chol = np.linalg.cholesky(oracle.covariance)
    except np.linalg.LinAlgError:
        raise DomainError("marginal covariance is not positive definite") from None
    z = np.linalg.solve(chol, x - oracle.b)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (x.size * np.log(2 * np.pi) + logdet + z @ z))


def oracle_bound_replications(oracle: LinearGaussianOracle, x, q: DiagGaussian, k: int, n_reps: int,
                              rng: np.random.Generator, max_rows: int = 1_000_000) -> np.ndarray:
    """``n_reps`` independent draws of the k-sample bound estimate for one x."""
    d = q.mean.size
    out = np.empty(n_reps)
    per_chunk = max(1, max_rows // k)
    for start in range(0, n_reps, per_chunk):
        n = min(per_chunk, n_reps - start)
        eps = rng.standard_normal((n, k, d))
        out[start : start + n] = log_sum_exp(oracle.log_weights(x, q, eps), axis=1) - np.log(k)
    return out


@dataclass
class TailCheck:
    b_values: np.ndarray
    frequencies: np.ndarray
    limits: np.ndarray  # exp(-b) plus three binomial standard errors
    log_marginal: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.frequencies <= self.limits))


def mad_tail_check(oracle: LinearGaussianOracle, x, q: DiagGaussian, k: int, b_values, n_reps: int,
                   rng: np.random.Generator) -> TailCheck:
    """Empirical Pr(L_hat_k > log p(x) + b) against the Markov limit exp(-b)."""
    if n_reps < 10_000:
        raise ValueError("n_reps must be at least 1e4")
    b = np.asarray(b_values, dtype=np.float64)
    log_px = oracle_log_marginal(oracle, x)
    est = oracle_bound_replications(oracle, x, q, k, n_reps, rng)
    freq = np.array([np.mean(est > log_px + bb) for bb in b])
    p = np.exp(-b)
    limits = p + 3.0 * np.sqrt(p * (1.0 - p) / n_reps)
    return TailCheck(b, freq, limits, log_px)
