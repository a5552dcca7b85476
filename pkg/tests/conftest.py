import numpy as np
import pytest

from iwae_lab.mathcore import make_rng
from iwae_lab.model import ArchitectureSpec, init_params


def make_model(arch: ArchitectureSpec, seed: int = 0, jitter: float = 0.3):
    """Glorot init plus noise on every array so biases are nonzero too."""
    rng = make_rng(seed)
    params = init_params(arch, rng)
    for a in params.arrays():
        a += jitter * rng.standard_normal(a.shape)
    return params


def binary_vector(dim: int, seed: int = 0) -> np.ndarray:
    return (make_rng(seed + 1000).random(dim) < 0.5).astype(np.float64)


def finite_difference(fn, params, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``fn(params)`` over every parameter."""
    theta = params.flat()
    out = np.empty_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        params.set_flat(t)
        up = fn(params)
        t[i] -= 2 * h
        params.set_flat(t)
        out[i] = (up - fn(params)) / (2 * h)
    params.set_flat(theta)
    return out


def assert_grad_close(analytic, numeric, rel, abs_floor=1e-8):
    small = np.abs(numeric) < abs_floor
    np.testing.assert_allclose(analytic[small], numeric[small], atol=abs_floor, rtol=0)
    np.testing.assert_allclose(analytic[~small], numeric[~small], rtol=rel, atol=0)


@pytest.fixture
def tiny_arch():
    return ArchitectureSpec((3,), ((5,),), 4)


@pytest.fixture
def two_layer_arch():
    return ArchitectureSpec((3, 2), ((5,), (4, 3)), 6)
