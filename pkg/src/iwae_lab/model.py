"""Generative and recognition stacks, log importance weights and their gradients.

Layer ``l`` (1-based in the math, 0-based in the lists here) is a diagonal
Gaussian whose mean and variance come from a tanh trunk followed by two linear
heads; the variance head is exp-activated and the square root is taken once
to get the standard deviation. ``h^0 = x``.

* ``recognition[l]`` is q(h^{l+1} | h^l)
* ``generative[l]`` is p(h^{l+1} | h^{l+2}) for all but the top layer
* ``decoder`` is the Bernoulli p(x | h^1)
* the top layer has the fixed prior N(0, I)

Every function works on a batch of rows; row ``r`` of ``x`` is paired with row
``r`` of each ``eps`` array. A 1-D ``x`` is a batch of one and results are
squeezed back to scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .mathcore import DomainError, ShapeError
from .net import (
    ActivationTape,
    LinearLayer,
    MlpBlock,
    glorot_init,
    linear_backward,
    linear_forward,
    mlp_backward,
    mlp_forward,
    mlp_init,
    sigmoid,
)
from .prob import (
    P_MIN,
    BernoulliVec,
    DiagGaussian,
    bernoulli_log_pmf,
    gaussian_log_pdf,
    standard_normal_log_pdf,
)


@dataclass(frozen=True)
class ArchitectureSpec:
    stochastic_dims: tuple[int, ...]
    deterministic_dims: tuple[tuple[int, ...], ...]
    observation_dim: int = 784

    def __post_init__(self):
        object.__setattr__(self, "stochastic_dims", tuple(int(d) for d in self.stochastic_dims))
        object.__setattr__(
            self, "deterministic_dims", tuple(tuple(int(w) for w in gap) for gap in self.deterministic_dims)
        )
        if not self.stochastic_dims:
            raise ValueError("at least one stochastic layer is required")
        if len(self.deterministic_dims) != len(self.stochastic_dims):
            raise ValueError("need one deterministic gap per stochastic layer")
        dims = list(self.stochastic_dims) + [w for gap in self.deterministic_dims for w in gap]
        if self.observation_dim < 1 or any(d < 1 for d in dims):
            raise ValueError("all dimensions must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.stochastic_dims)

    @classmethod
    def one_layer(cls, latent: int = 50, hidden: int = 200, observation_dim: int = 784) -> "ArchitectureSpec":
        return cls((latent,), ((hidden, hidden),), observation_dim)

    @classmethod
    def two_layer(cls, observation_dim: int = 784) -> "ArchitectureSpec":
        return cls((100, 50), ((200, 200), (100, 100)), observation_dim)


@dataclass
class GaussianConditional:
    trunk: MlpBlock
    mean_head: LinearLayer
    logvar_head: LinearLayer

    def named_arrays(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.trunk.layers):
            yield f"{prefix}.trunk.{i}.weight", layer.weight
            yield f"{prefix}.trunk.{i}.bias", layer.bias
        yield f"{prefix}.mean.weight", self.mean_head.weight
        yield f"{prefix}.mean.bias", self.mean_head.bias
        yield f"{prefix}.logvar.weight", self.logvar_head.weight
        yield f"{prefix}.logvar.bias", self.logvar_head.bias

    def zeros_like(self) -> "GaussianConditional":
        return GaussianConditional(self.trunk.zeros_like(), self.mean_head.zeros_like(), self.logvar_head.zeros_like())


@dataclass
class BernoulliConditional:
    trunk: MlpBlock
    mean_head: LinearLayer

    def named_arrays(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.trunk.layers):
            yield f"{prefix}.trunk.{i}.weight", layer.weight
            yield f"{prefix}.trunk.{i}.bias", layer.bias
        yield f"{prefix}.mean.weight", self.mean_head.weight
        yield f"{prefix}.mean.bias", self.mean_head.bias

    def zeros_like(self) -> "BernoulliConditional":
        return BernoulliConditional(self.trunk.zeros_like(), self.mean_head.zeros_like())


@dataclass
class ModelParams:
    """All of theta. Also used, with identical layout, as a gradient buffer."""

    arch: ArchitectureSpec
    recognition: list[GaussianConditional]
    generative: list[GaussianConditional]
    decoder: BernoulliConditional

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, cond in enumerate(self.recognition):
            out.extend(cond.named_arrays(f"rec.{i}"))
        for i, cond in enumerate(self.generative):
            out.extend(cond.named_arrays(f"gen.{i}"))
        out.extend(self.decoder.named_arrays("dec"))
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_arrays()]

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            [c.zeros_like() for c in self.recognition],
            [c.zeros_like() for c in self.generative],
            self.decoder.zeros_like(),
        )

    def copy(self) -> "ModelParams":
        out = self.zeros_like()
        for dst, src in zip(out.arrays(), self.arrays()):
            dst[...] = src
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for a in self.arrays():
            a[...] = vec[pos : pos + a.size].reshape(a.shape)
            pos += a.size

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


# GradBuffer is a ModelParams holding derivatives instead of weights.
GradBuffer = ModelParams


def _gaussian_conditional(rng, n_in: int, hidden: tuple[int, ...], n_out: int) -> GaussianConditional:
    widths = [n_in, *hidden]
    trunk = mlp_init(rng, widths, ["tanh"] * len(hidden))
    return GaussianConditional(trunk, glorot_init(rng, widths[-1], n_out), glorot_init(rng, widths[-1], n_out))


def init_params(arch: ArchitectureSpec, rng: np.random.Generator) -> ModelParams:
    """Glorot-initialized parameters; the generative side mirrors the recognition widths."""
    dims = [arch.observation_dim, *arch.stochastic_dims]
    rec = [_gaussian_conditional(rng, dims[l], arch.deterministic_dims[l], dims[l + 1]) for l in range(arch.n_layers)]
    gen = [
        _gaussian_conditional(rng, dims[l + 2], tuple(reversed(arch.deterministic_dims[l + 1])), dims[l + 1])
        for l in range(arch.n_layers - 1)
    ]
    hidden = tuple(reversed(arch.deterministic_dims[0]))
    widths = [dims[1], *hidden]
    dec = BernoulliConditional(
        mlp_init(rng, widths, ["tanh"] * len(hidden)), glorot_init(rng, widths[-1], arch.observation_dim)
    )
    return ModelParams(arch, rec, gen, dec)


@dataclass
class LatentSample:
    eps: list[np.ndarray]
    h: list[np.ndarray]
    log_q: np.ndarray | float


@dataclass
class _GaussianTape:
    trunk: ActivationTape
    features: np.ndarray
    mean: np.ndarray
    std: np.ndarray


@dataclass
class ForwardPass:
    """Everything a backward sweep over one batch of rows needs."""

    x: np.ndarray
    eps: list[np.ndarray]
    h: list[np.ndarray]
    rec: list[_GaussianTape]
    gen: list[_GaussianTape]
    dec_trunk: ActivationTape
    dec_features: np.ndarray
    dec_prob: np.ndarray  # unclamped sigmoid output
    log_q: np.ndarray
    log_p: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def log_w(self) -> np.ndarray:
        return self.log_p - self.log_q


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _gaussian_forward(cond: GaussianConditional, inp: np.ndarray) -> _GaussianTape:
    features, tape = mlp_forward(cond.trunk, inp)
    mean = linear_forward(cond.mean_head, features)
    var = np.exp(linear_forward(cond.logvar_head, features))
    std = np.sqrt(var)
    if not np.all(std > 0):
        raise DomainError("predicted variance underflowed to zero")
    return _GaussianTape(tape, features, mean, std)


def _gaussian_backward(cond: GaussianConditional, tape: _GaussianTape, g_mean, g_std):
    """Backprop (d/dmean, d/dstd) into the conditional; returns (input_grad, grads)."""
    # std = sqrt(exp(a)) so d std / d a = std / 2
    g_a = g_std * 0.5 * tape.std
    g_f1, mean_grad = linear_backward(cond.mean_head, tape.features, g_mean)
    g_f2, logvar_grad = linear_backward(cond.logvar_head, tape.features, g_a)
    g_in, trunk_grad = mlp_backward(cond.trunk, tape.trunk, g_f1 + g_f2)
    return g_in, GaussianConditional(trunk_grad, mean_grad, logvar_grad)


def draw_eps(arch: ArchitectureSpec, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Auxiliary noise for ``n`` rows, layer by layer."""
    return [rng.standard_normal((n, d)) for d in arch.stochastic_dims]


def _check_eps(arch: ArchitectureSpec, eps, n: int) -> list[np.ndarray]:
    if len(eps) != arch.n_layers:
        raise ShapeError(f"expected {arch.n_layers} eps arrays, got {len(eps)}")
    out = []
    for e, d in zip(eps, arch.stochastic_dims):
        e = np.asarray(e, dtype=np.float64)
        if e.ndim == 1:
            e = e[None, :]
        if e.shape != (n, d):
            raise ShapeError(f"eps shape {e.shape} != {(n, d)}")
        out.append(e)
    return out


def forward_pass(params: ModelParams, x, eps) -> ForwardPass:
    x, _ = _as_batch(x)
    arch = params.arch
    if x.shape[1] != arch.observation_dim:
        raise ShapeError(f"x width {x.shape[1]} != observation_dim {arch.observation_dim}")
    eps = _check_eps(arch, eps, x.shape[0])

    rec, hs = [], []
    log_q = np.zeros(x.shape[0])
    inp = x
    for cond, e in zip(params.recognition, eps):
        t = _gaussian_forward(cond, inp)
        h = t.std * e + t.mean
        log_q += gaussian_log_pdf(DiagGaussian(t.mean, t.std), h)
        rec.append(t)
        hs.append(h)
        inp = h

    log_p = standard_normal_log_pdf(hs[-1])
    gen = []
    for j, cond in enumerate(params.generative):
        t = _gaussian_forward(cond, hs[j + 1])
        log_p = log_p + gaussian_log_pdf(DiagGaussian(t.mean, t.std), hs[j])
        gen.append(t)

    features, dec_tape = mlp_forward(params.decoder.trunk, hs[0])
    prob = sigmoid(linear_forward(params.decoder.mean_head, features))
    log_p = log_p + bernoulli_log_pmf(BernoulliVec(prob), x)
    return ForwardPass(x, eps, hs, rec, gen, dec_tape, features, prob, log_q, np.asarray(log_p))


def backward_pass(params: ModelParams, fp: ForwardPass, dlogp, dlogq) -> ModelParams:
    """Gradient of ``sum_r dlogp[r] * log p_r + dlogq[r] * log q_r`` over theta.

    ``h`` is treated as the deterministic function h(eps, x, theta), so the
    recognition parameters receive signal both from log q and, through the
    latent values, from log p.
    """
    n = fp.x.shape[0]
    dlogp = np.broadcast_to(np.asarray(dlogp, dtype=np.float64), (n,))[:, None]
    dlogq = np.broadcast_to(np.asarray(dlogq, dtype=np.float64), (n,))[:, None]
    grads = params.zeros_like()
    g_h = [np.zeros_like(h) for h in fp.h]

    g_h[-1] -= dlogp * fp.h[-1]

    for j, (cond, t) in enumerate(zip(params.generative, fp.gen)):
        r = (fp.h[j] - t.mean) / t.std
        g_h[j] -= dlogp * r / t.std
        g_in, grads.generative[j] = _gaussian_backward(
            cond, t, dlogp * r / t.std, dlogp * (r * r - 1.0) / t.std
        )
        g_h[j + 1] += g_in

    dec = params.decoder
    clamped = (fp.dec_prob < P_MIN) | (fp.dec_prob > 1.0 - P_MIN)
    g_logit = np.where(clamped, 0.0, dlogp * (fp.x - fp.dec_prob))
    g_feat, head_grad = linear_backward(dec.mean_head, fp.dec_features, g_logit)
    g_in, trunk_grad = mlp_backward(dec.trunk, fp.dec_trunk, g_feat)
    grads.decoder = BernoulliConditional(trunk_grad, head_grad)
    g_h[0] += g_in

    # explicit dependence of log q on (h, mean, std); reparam path added below
    g_mean, g_std = [], []
    for l, t in enumerate(fp.rec):
        r = (fp.h[l] - t.mean) / t.std
        g_h[l] -= dlogq * r / t.std
        g_mean.append(dlogq * r / t.std)
        g_std.append(dlogq * (r * r - 1.0) / t.std)

    for l in reversed(range(params.arch.n_layers)):
        gm = g_mean[l] + g_h[l]
        gs = g_std[l] + g_h[l] * fp.eps[l]
        g_in, grads.recognition[l] = _gaussian_backward(params.recognition[l], fp.rec[l], gm, gs)
        if l > 0:
            g_h[l - 1] += g_in
    return grads


def take_rows(fp: ForwardPass, rows) -> ForwardPass:
    """Restrict a forward pass to a subset of rows (for a cheaper backward)."""
    rows = np.asarray(rows)

    def sub(obj):
        if isinstance(obj, np.ndarray):
            return obj[rows]
        if isinstance(obj, list):
            return [sub(o) for o in obj]
        if isinstance(obj, ActivationTape):
            return ActivationTape(sub(obj.inputs), sub(obj.outputs), False)
        if isinstance(obj, _GaussianTape):
            return _GaussianTape(sub(obj.trunk), sub(obj.features), sub(obj.mean), sub(obj.std))
        raise TypeError(type(obj))

    return ForwardPass(
        sub(fp.x), sub(fp.eps), sub(fp.h), sub(fp.rec), sub(fp.gen),
        sub(fp.dec_trunk), sub(fp.dec_features), sub(fp.dec_prob), sub(fp.log_q), sub(fp.log_p),
    )


def _squeeze_sample(sample: LatentSample, squeeze: bool) -> LatentSample:
    if not squeeze:
        return sample
    return LatentSample([e[0] for e in sample.eps], [h[0] for h in sample.h], float(sample.log_q[0]))


def recognition_forward(params: ModelParams, x, rng: np.random.Generator | None = None, eps=None) -> LatentSample:
    """Ancestral bottom-up pass through q; draws eps from ``rng`` unless given."""
    xb, squeeze = _as_batch(x)
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps is required")
        eps = draw_eps(params.arch, xb.shape[0], rng)
    eps = _check_eps(params.arch, eps, xb.shape[0])
    inp, hs = xb, []
    log_q = np.zeros(xb.shape[0])
    for cond, e in zip(params.recognition, eps):
        t = _gaussian_forward(cond, inp)
        h = t.std * e + t.mean
        log_q += gaussian_log_pdf(DiagGaussian(t.mean, t.std), h)
        hs.append(h)
        inp = h
    return _squeeze_sample(LatentSample(eps, hs, log_q), squeeze)


def recognition_means(params: ModelParams, x) -> list[np.ndarray]:
    """Posterior means per layer, each layer conditioned on the mean of the one below."""
    inp, _ = _as_batch(x)
    means = []
    for cond in params.recognition:
        inp = _gaussian_forward(cond, inp).mean
        means.append(inp)
    return means


def generative_log_joint(params: ModelParams, x, sample: LatentSample):
    xb, squeeze = _as_batch(x)
    hs = [np.atleast_2d(h) for h in sample.h]
    if len(hs) != params.arch.n_layers:
        raise ShapeError("sample depth does not match the architecture")
    log_p = standard_normal_log_pdf(hs[-1])
    for j, cond in enumerate(params.generative):
        t = _gaussian_forward(cond, hs[j + 1])
        log_p = log_p + gaussian_log_pdf(DiagGaussian(t.mean, t.std), hs[j])
    features, _ = mlp_forward(params.decoder.trunk, hs[0])
    prob = sigmoid(linear_forward(params.decoder.mean_head, features))
    log_p = log_p + bernoulli_log_pmf(BernoulliVec(prob), xb)
    return float(log_p[0]) if squeeze else np.asarray(log_p)


def log_weight(params: ModelParams, x, sample: LatentSample):
    return generative_log_joint(params, x, sample) - sample.log_q


def log_weight_grad(params: ModelParams, x, eps, part: str = "both"):
    """``(log w, grad)`` at fixed eps, summed over rows if ``x`` is a batch.

    ``part`` selects the full log-weight (``"both"``), only log p(x, h)
    (``"log_p"``) or only log q(h | x) (``"log_q"``); in every case the latent
    values move with theta.
    """
    xb, squeeze = _as_batch(x)
    fp = forward_pass(params, xb, eps)
    coef = {"both": (1.0, -1.0), "log_p": (1.0, 0.0), "log_q": (0.0, 1.0)}[part]
    grads = backward_pass(params, fp, coef[0], coef[1])
    value = {"both": fp.log_w, "log_p": fp.log_p, "log_q": fp.log_q}[part]
    return (float(value[0]) if squeeze else value), grads


def sample_prior_means(params: ModelParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestral samples from p, returned as the Bernoulli means of x."""
    h = rng.standard_normal((n, params.arch.stochastic_dims[-1]))
    for cond in reversed(params.generative):
        t = _gaussian_forward(cond, h)
        h = t.std * rng.standard_normal(t.mean.shape) + t.mean
    features, _ = mlp_forward(params.decoder.trunk, h)
    return sigmoid(linear_forward(params.decoder.mean_head, features))
