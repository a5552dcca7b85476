"""How the k-sample bound closes in on log p(x).

A linear-Gaussian model has a closed-form marginal, so we can watch the
importance-weighted bound approach it as k grows.
"""

import numpy as np

from iwae_lab.evaluation import LinearGaussianOracle, oracle_bound_replications, oracle_log_marginal
from iwae_lab.mathcore import make_rng
from iwae_lab.prob import DiagGaussian

rng = make_rng(0)
W = rng.standard_normal((5, 2))
b = rng.standard_normal(5)
model = LinearGaussianOracle(W, b, obs_std=0.7)
x = W @ np.array([0.8, -0.5]) + b + 0.7 * rng.standard_normal(5)

log_px = oracle_log_marginal(model, x)
print(f"exact log p(x) = {log_px:.4f}")

# a proposal that is shifted and wider than the true posterior
mean, cov = model.posterior(x)
q = DiagGaussian(mean + 0.3, np.full(2, np.sqrt(1.5 * np.linalg.eigvalsh(cov).max())))

for k in (1, 5, 50, 500, 5000):
    reps = oracle_bound_replications(model, x, q, k, n_reps=max(200, 100_000 // k), rng=make_rng(k))
    se = reps.std(ddof=1) / np.sqrt(reps.size)
    print(f"k={k:5d}  mean bound {reps.mean():.4f} +- {se:.4f}   gap {log_px - reps.mean():.4f}")

