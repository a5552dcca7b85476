import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iwae_lab.mathcore import (
    ShapeError,
    log_sum_exp,
    make_rng,
    matmul,
    sample_categorical,
    sample_standard_normal,
    softmax,
    spawn_rngs,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_matmul_identity_and_hand_values():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), a), a)
    np.testing.assert_array_equal(matmul([[1.0, 2.0]], [[3.0], [4.0]]), [[11.0]])


def test_matmul_matches_triple_loop():
    rng = make_rng(3)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for t in range(4):
                expected[i, j] += a[i, t] * b[t, j]
    np.testing.assert_allclose(matmul(a, b), expected, rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_matmul_associative(m, n, p, r, seed):
    rng = make_rng(seed)
    a, b, c = rng.normal(size=(m, n)), rng.normal(size=(n, p)), rng.normal(size=(p, r))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    np.testing.assert_allclose(left, right, rtol=1e-9, atol=1e-12)


def test_log_sum_exp_examples():
    assert log_sum_exp([0.0]) == 0.0
    assert log_sum_exp([-1000.0, -1000.0]) == pytest.approx(-1000 + math.log(2), abs=1e-12)
    assert log_sum_exp([0.0, 1.0, 2.0]) == pytest.approx(math.log(1 + math.e + math.e**2), abs=1e-12)
    assert log_sum_exp([0.0, 1.0, 2.0]) == pytest.approx(2.40761, abs=1e-5)


def test_log_sum_exp_empty():
    with pytest.raises(ValueError):
        log_sum_exp([])


def test_log_sum_exp_no_overflow():
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2))


def test_log_sum_exp_axis():
    v = np.array([[0.0, 1.0], [2.0, -3.0]])
    np.testing.assert_allclose(log_sum_exp(v, axis=1), [log_sum_exp(v[0]), log_sum_exp(v[1])])


@given(arrays(np.float64, st.integers(1, 20), elements=finite), st.floats(-100, 100))
def test_log_sum_exp_shift_invariance(v, c):
    assert log_sum_exp(v + c) == pytest.approx(log_sum_exp(v) + c, abs=1e-12 * max(1, abs(c), np.abs(v).max()))


@given(arrays(np.float64, st.integers(1, 20), elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariance(v, c):
    np.testing.assert_allclose(softmax(v + c), softmax(v), atol=1e-12)
    assert softmax(v).sum() == pytest.approx(1.0, abs=1e-9)


def test_standard_normal_moments():
    z = sample_standard_normal(make_rng(0), 10**6)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01


def test_standard_normal_deterministic():
    assert sample_standard_normal(make_rng(42), 3)[0] == sample_standard_normal(make_rng(42), 3)[0]


def test_spawned_streams_reproducible_and_distinct():
    a = [r.random() for r in spawn_rngs(7, 3)]
    b = [r.random() for r in spawn_rngs(7, 5)]
    assert a == b[:3]
    assert len(set(a)) == 3


def test_categorical_degenerate():
    rng = make_rng(1)
    assert all(sample_categorical(rng, [1.0]) == 0 for _ in range(100))
    assert all(sample_categorical(rng, [0.0, 1.0, 0.0]) == 1 for _ in range(1000))


def test_categorical_frequency():
    rng = make_rng(2)
    draws = [sample_categorical(rng, [0.25, 0.75]) for _ in range(10**5)]
    assert abs(np.mean(draws) - 0.75) < 0.01


@pytest.mark.parametrize("probs", [[0.5, 0.6], [-0.1, 1.1], [], [np.nan, 1.0]])
def test_categorical_rejects_invalid(probs):
    with pytest.raises(ValueError):
        sample_categorical(make_rng(0), probs)


def test_categorical_never_picks_zero_mass():
    rng = make_rng(5)
    probs = [0.0, 0.3, 0.0, 0.7, 0.0]
    draws = {sample_categorical(rng, probs) for _ in range(5000)}
    assert draws == {1, 3}
