import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from conftest import binary_vector, make_model
from iwae_lab.data import ImageDataset
from iwae_lab.estimators import estimate_bound
from iwae_lab.evaluation import (
    ActivityReport,
    LinearGaussianOracle,
    NllReport,
    ablate_inactive,
    evaluate_nll,
    example_bounds,
    mad_tail_check,
    oracle_bound_replications,
    oracle_log_marginal,
    unit_activity,
    write_report,
)
from iwae_lab.mathcore import DomainError, make_rng
from iwae_lab.model import ArchitectureSpec, draw_eps, forward_pass, recognition_means
from iwae_lab.prob import DiagGaussian


def orthogonal_oracle(seed=0):
    """d=2, D=5 with orthogonal columns, so the exact posterior is diagonal."""
    rng = make_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 2)))
    W = Q * np.array([1.5, 0.7])
    return LinearGaussianOracle(W, rng.standard_normal(5), 0.8)


def matched_q(oracle, x):
    mean, cov = oracle.posterior(x)
    np.testing.assert_allclose(cov, np.diag(np.diag(cov)), atol=1e-12)
    return DiagGaussian(mean, np.sqrt(np.diag(cov)))


def test_oracle_examples():
    zero = LinearGaussianOracle(np.zeros((1, 1)), np.array([0.3]), 1.0)
    assert oracle_log_marginal(zero, [0.3]) == pytest.approx(-0.918939, abs=1e-6)
    unit = LinearGaussianOracle(np.ones((1, 1)), np.array([0.3]), 1.0)
    assert oracle_log_marginal(unit, [0.3]) == pytest.approx(-0.5 * math.log(2 * math.pi * 2), abs=1e-12)
    assert oracle_log_marginal(unit, [0.3]) == pytest.approx(-1.26551, abs=1e-5)


def test_oracle_rejects_bad_inputs():
    with pytest.raises(DomainError):
        LinearGaussianOracle(np.ones((2, 1)), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        oracle_log_marginal(orthogonal_oracle(), np.zeros(3))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6))
def test_oracle_matches_scipy(seed, d, D):
    rng = make_rng(seed)
    oracle = LinearGaussianOracle(rng.standard_normal((D, d)), rng.standard_normal(D), 0.3 + rng.random())
    x = rng.standard_normal(D)
    ref = multivariate_normal(oracle.b, oracle.covariance).logpdf(x)
    assert oracle_log_marginal(oracle, x) == pytest.approx(ref, abs=1e-9)
    h = rng.standard_normal(d)
    joint = norm.logpdf(h).sum() + norm.logpdf(x, oracle.W @ h + oracle.b, oracle.obs_std).sum()
    assert oracle.log_joint(x, h) == pytest.approx(joint, abs=1e-9)


def test_oracle_posterior_matches_bayes_rule():
    oracle = orthogonal_oracle(3)
    x = make_rng(4).standard_normal(5)
    mean, cov = oracle.posterior(x)
    # log p(h|x) = log p(x,h) - log p(x) must be the Gaussian density N(mean, cov)
    for h in make_rng(5).standard_normal((4, 2)):
        lhs = oracle.log_joint(x, h) - oracle_log_marginal(oracle, x)
        assert lhs == pytest.approx(multivariate_normal(mean, cov).logpdf(h), abs=1e-10)


def test_matched_q_gives_constant_weights():
    oracle = orthogonal_oracle()
    x = make_rng(1).standard_normal(5)
    q = matched_q(oracle, x)
    log_px = oracle_log_marginal(oracle, x)
    lw = oracle.log_weights(x, q, make_rng(2).standard_normal((1000, 2)))
    np.testing.assert_allclose(lw, log_px, atol=1e-10)
    for k in (1, 7, 100):
        bounds = oracle_bound_replications(oracle, x, q, k, 50, make_rng(k))
        np.testing.assert_allclose(bounds, log_px, atol=1e-6)
    check = mad_tail_check(oracle, x, q, 5, [0.5, 1, 2], 10_000, make_rng(3))
    assert np.all(check.frequencies == 0) and check.passed


def test_importance_weights_are_unbiased():
    oracle = orthogonal_oracle(7)
    x = make_rng(8).standard_normal(5)
    q = DiagGaussian(np.zeros(2), np.full(2, 1.2))
    w = np.exp(oracle.log_weights(x, q, make_rng(9).standard_normal((10**6, 2))))
    px = math.exp(oracle_log_marginal(oracle, x))
    assert abs(w.mean() - px) < 4 * w.std() / 1e3


def test_mad_tail_check_contract():
    oracle = orthogonal_oracle(11)
    x = make_rng(12).standard_normal(5)
    with pytest.raises(ValueError):
        mad_tail_check(oracle, x, DiagGaussian(np.zeros(2), np.ones(2)), 5, [1], 100, make_rng(0))
    check = mad_tail_check(oracle, x, DiagGaussian(np.zeros(2), np.ones(2)), 5, [1, 2, 3], 10_000, make_rng(0))
    np.testing.assert_allclose(check.limits[0], math.exp(-1) + 3 * math.sqrt(math.exp(-1) * (1 - math.exp(-1)) / 1e4))
    assert check.passed


@pytest.fixture(scope="module")
def small_model():
    arch = ArchitectureSpec((3,), ((6,),), 8)
    data = np.stack([binary_vector(8, s) for s in range(12)])
    return make_model(arch, seed=5), data


def test_evaluate_nll_k1_is_single_sample_bound(small_model):
    params, x = small_model
    report = evaluate_nll(params, x, k_eval=1, seed=4)
    # same stream layout as evaluate_nll: second child of the seed, one draw per example
    rng = make_rng(np.random.SeedSequence(4).spawn(2)[1])
    manual = [forward_pass(params, x[i : i + 1], draw_eps(params.arch, 1, rng)).log_w[0] for i in range(len(x))]
    np.testing.assert_allclose(report.per_example_bounds, manual, rtol=0, atol=1e-12)
    assert report.mean_nll == pytest.approx(-np.mean(manual), abs=1e-12)


def test_chunking_does_not_change_bounds(small_model):
    params, x = small_model
    full = example_bounds(params, x[:3], 500, make_rng(0), max_rows=10**6)
    for rows in (1, 7, 64, 499, 500, 1200):
        chunked = example_bounds(params, x[:3], 500, make_rng(0), max_rows=rows)
        np.testing.assert_allclose(chunked, full, rtol=0, atol=1e-12)


def test_nll_decreases_with_k_eval(small_model):
    params, x = small_model
    reports = [evaluate_nll(params, x, k, seed=1) for k in (1, 10, 100, 1000)]
    for a, b in zip(reports, reports[1:]):
        se = math.hypot(a.stderr, b.stderr)
        assert b.mean_nll <= a.mean_nll + 3 * se


def test_evaluate_nll_deterministic_and_matches_estimate(small_model):
    params, x = small_model
    a = evaluate_nll(params, x, 50, seed=2)
    b = evaluate_nll(params, x, 50, seed=2)
    np.testing.assert_array_equal(a.per_example_bounds, b.per_example_bounds)
    assert a.mean_nll == -np.mean(a.per_example_bounds)
    ref = estimate_bound(params, x, 50, make_rng(0))
    assert abs(a.mean_nll + ref.mean()) < 3 * (a.stderr + np.std(ref) / np.sqrt(len(ref)))
    with pytest.raises(ValueError):
        evaluate_nll(params, x, 0)


def test_stochastic_dataset_binarized_once(small_model):
    params, _ = small_model
    gray = ImageDataset(make_rng(0).random((6, 8)), "test")
    a, b = evaluate_nll(params, gray, 5, seed=3), evaluate_nll(params, gray, 5, seed=3)
    np.testing.assert_array_equal(a.per_example_bounds, b.per_example_bounds)
    assert np.all(np.isfinite(a.per_example_bounds)) and a.split_tag == "test"


def test_unit_activity_zero_head(small_model):
    params, x = small_model
    p = params.copy()
    p.recognition[0].mean_head.weight[:] = 0.0
    report = unit_activity(p, x)
    np.testing.assert_array_equal(report.A_u[0], 0.0)
    assert report.active_counts == [0] and report.label == "0"


def test_unit_activity_hand_variance():
    arch = ArchitectureSpec((1,), ((),), 2)
    params = make_model(arch, 0)
    head = params.recognition[0].mean_head
    head.weight[:] = [[1.0, -1.0]]
    head.bias[:] = 0.0
    report = unit_activity(params, np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert report.A_u[0][0] == pytest.approx(2.0, abs=1e-15)
    assert report.active_mask[0][0]


def test_unit_activity_permutation_invariant(small_model):
    params, x = small_model
    a = unit_activity(params, x).A_u[0]
    b = unit_activity(params, x[make_rng(3).permutation(len(x))]).A_u[0]
    np.testing.assert_allclose(a, b, rtol=1e-12)
    with pytest.raises(ValueError):
        unit_activity(params, x[:1])


def test_two_layer_activity_uses_mean_path():
    arch = ArchitectureSpec((3, 2), ((5,), (4,)), 6)
    params = make_model(arch, 2)
    x = np.stack([binary_vector(6, s) for s in range(9)])
    report = unit_activity(params, x)
    means = recognition_means(params, x)
    assert [a.shape for a in report.A_u] == [(3,), (2,)]
    np.testing.assert_allclose(report.A_u[1], np.var(means[1], axis=0, ddof=1))


def test_ablating_nothing_is_identity(small_model):
    params, x = small_model
    report = unit_activity(params, x)
    out = ablate_inactive(params, report, threshold=-1.0)
    for a, b in zip(out.arrays(), params.arrays()):
        np.testing.assert_array_equal(a, b)
    assert evaluate_nll(out, x, 20, 0).mean_nll == evaluate_nll(params, x, 20, 0).mean_nll


@pytest.mark.parametrize("arch", [
    ArchitectureSpec((3,), ((6,),), 8),
    ArchitectureSpec((3, 2), ((6,), (5,)), 8),
    ArchitectureSpec((3, 2), ((), ()), 8),
])
def test_ablating_dead_unit_keeps_bound(arch):
    params = make_model(arch, 1)
    x = np.repeat(np.stack([binary_vector(8, s) for s in range(5)]), 8, axis=0)
    # a dead unit built by hand: q = N(0, 1) matches its prior and nothing reads it
    dead = params.copy()
    rec = dead.recognition[0]
    for head in (rec.mean_head, rec.logvar_head):
        head.weight[1] = 0.0
        head.bias[1] = 0.0
    if arch.n_layers == 2:
        for head in (dead.generative[0].mean_head, dead.generative[0].logvar_head):
            head.weight[1] = 0.0
            head.bias[1] = 0.0
        nxt = dead.recognition[1]
        first = nxt.trunk.layers[0] if nxt.trunk.layers else nxt.mean_head
        first.weight[:, 1] = 0.0
        if not nxt.trunk.layers:
            nxt.logvar_head.weight[:, 1] = 0.0
    dec = dead.decoder
    (dec.trunk.layers[0] if dec.trunk.layers else dec.mean_head).weight[:, 1] = 0.0

    report = unit_activity(dead, x)
    assert report.A_u[0][1] == 0.0
    ablated = ablate_inactive(dead, report, threshold=1e-4)
    eps = draw_eps(arch, x.shape[0], make_rng(0))
    np.testing.assert_array_equal(forward_pass(ablated, x, eps).log_w, forward_pass(dead, x, eps).log_w)
    # the pinned unit adds ln N(e; 0, 1) - ln N(e; 0, 1) = 0 whatever its noise
    moved = [e.copy() for e in eps]
    moved[0][:, 1] = make_rng(1).standard_normal(x.shape[0])
    np.testing.assert_allclose(forward_pass(ablated, x, moved).log_w, forward_pass(ablated, x, eps).log_w,
                               rtol=0, atol=1e-12)


def test_ablation_refuses_empty_layer(small_model):
    params, x = small_model
    report = unit_activity(params, x)
    with pytest.raises(ValueError, match="no active units"):
        ablate_inactive(params, report, threshold=np.inf)


def test_reports_serialize(tmp_path):
    nll = NllReport(85.0, 5000, np.array([-84.0, -86.0]), 7)
    txt, js = write_report(nll, tmp_path / "nll")
    data = json.loads(open(js).read())
    assert data["schema"] == "iwae-lab/nll-report" and data["version"] == 1
    assert data["mean_nll"] == 85.0 and data["eval_seed"] == 7
    assert data["stderr"] == pytest.approx(1.0)
    assert "mean_nll     85.000000" in open(txt).read()
    act = ActivityReport([np.array([0.5, 1e-5, 0.02]), np.array([3.0])], n_examples=10)
    txt, js = write_report(act, tmp_path / "act")
    data = json.loads(open(js).read())
    assert data["active_counts"] == [2, 1] and act.label == "2+1"
    assert "# active units: 2+1" in open(txt).read()
    assert [m.tolist() for m in act.active_mask] == [[True, False, True], [True]]
