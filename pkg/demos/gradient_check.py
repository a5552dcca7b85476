"""Checking the hand-written backward pass against finite differences."""

import numpy as np

from iwae_lab.estimators import iwae_gradient, vae_gradient
from iwae_lab.mathcore import make_rng
from iwae_lab.model import ArchitectureSpec, draw_eps, init_params, log_weight_grad

arch = ArchitectureSpec(stochastic_dims=(3, 2), deterministic_dims=((8,), (6,)), observation_dim=10)
rng = make_rng(0)
params = init_params(arch, rng)
for a in params.arrays():  # nonzero biases make the check stricter
    a += 0.3 * rng.standard_normal(a.shape)

x = (rng.random(10) < 0.5).astype(float)
eps = draw_eps(arch, 1, rng)
value, grad = log_weight_grad(params, x, eps)
print(f"log w = {value:.5f}, {params.size} parameters")

theta, g = params.flat(), grad.flat()
h, worst = 1e-5, 0.0
for i in rng.choice(theta.size, 40, replace=False):
    t = theta.copy()
    t[i] += h
    params.set_flat(t)
    up = log_weight_grad(params, x, eps)[0]
    t[i] -= 2 * h
    params.set_flat(t)
    down = log_weight_grad(params, x, eps)[0]
    worst = max(worst, abs((up - down) / (2 * h) - g[i]))
params.set_flat(theta)
print(f"worst absolute error over 40 random coordinates: {worst:.2e}")

# at k=1 the two estimators are the same thing
eps = draw_eps(arch, 1, make_rng(3))
same = np.array_equal(vae_gradient(params, x, 1, eps=eps).grads.flat(), iwae_gradient(params, x, 1, eps=eps).grads.flat())
print("vae == iwae at k=1:", same)
