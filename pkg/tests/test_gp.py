import numpy as np
import pytest
from scipy import linalg

from braggedge.errors import ConditioningError, InvalidArgumentError, OptimizationError
from braggedge.gp import (KINDS, GPEdgeProblem, Kernel, cholesky_jitter, gp_condition,
                          kernel_eval, kernel_log_gradients, kernel_matrix,
                          log_marginal_likelihood, optimize_hyperparameters)
from oracles import joint_condition, kernel_blocks, radial_kernel_mp, random_instance


def _problem(inst):
    (kind, sf, l), lam, y, A, noise, _ = inst
    return GPEdgeProblem(lam, y, A, noise, Kernel(kind, sf, l))


@pytest.mark.parametrize("kind", KINDS)
def test_kernel_at_zero_is_sigma_f(kind):
    k = Kernel(kind, 1.7, 0.3)
    assert kernel_eval(k, 0.4, 0.4) == pytest.approx(1.7, rel=1e-15)


def test_se_value():
    assert kernel_eval(Kernel("squared_exponential", 1.0, 1.0), 1.0, 0.0) == pytest.approx(
        np.exp(-0.5), rel=1e-15)


def test_matern32_second_derivative_at_zero():
    k = Kernel("matern_3_2", 2.0, 0.5)
    assert kernel_eval(k, 0.3, 0.3, deriv=2) == pytest.approx(3 * 2.0 / 0.25, rel=1e-14)


def test_kernel_validation():
    with pytest.raises(InvalidArgumentError):
        Kernel("rbf")
    with pytest.raises(InvalidArgumentError):
        Kernel("matern_3_2", sigma_f=0.0)
    with pytest.raises(InvalidArgumentError):
        Kernel("matern_3_2", l=-1.0)
    with pytest.raises(InvalidArgumentError):
        kernel_eval(Kernel(), 0.0, 1.0, deriv=3)


@pytest.mark.parametrize("kind", KINDS)
def test_oracle_kernel_blocks_match_mpmath(kind):
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40
    sf, l = mp.mpf("1.3"), mp.mpf("0.4")
    for r in ("0.37", "-0.61", "1.9"):
        r = mp.mpf(r)
        d1 = mp.diff(lambda t: radial_kernel_mp(kind, sf, l, t), r)
        d2 = -mp.diff(lambda t: radial_kernel_mp(kind, sf, l, t), r, 2)
        k, k1, k2 = kernel_blocks(kind, 1.3, 0.4, np.array([float(r)]), np.array([0.0]))
        assert k[0, 0] == pytest.approx(float(radial_kernel_mp(kind, sf, l, r)), rel=1e-13)
        assert k1[0, 0] == pytest.approx(float(d1), rel=1e-12)
        assert k2[0, 0] == pytest.approx(float(d2), rel=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_kernel_matches_oracle_blocks(kind):
    rng = np.random.default_rng(0)
    x, x2 = rng.uniform(0, 1, 6), rng.uniform(0, 1, 4)
    k = Kernel(kind, 1.3, 0.4)
    for d, ref in enumerate(kernel_blocks(kind, 1.3, 0.4, x, x2)):
        np.testing.assert_allclose(kernel_matrix(k, x, x2, d), ref, rtol=1e-12, atol=1e-14)


def _fd_rel_err(fd, an, scale):
    return abs(fd - an) / max(abs(an), scale)


@pytest.mark.parametrize("kind", KINDS)
def test_kernel_derivative_blocks_finite_difference(kind):
    # relative error measured against the block's natural scale sigma_f / l**d
    rng = np.random.default_rng(1)
    for _ in range(20):
        sf, l = np.exp(rng.uniform(-1, 1)), np.exp(rng.uniform(-4, -1))
        k = Kernel(kind, sf, l)
        x, x2 = rng.uniform(4.0, 4.1, 2)
        h = 1e-5 * l
        fd1 = (kernel_eval(k, x + h, x2) - kernel_eval(k, x - h, x2)) / (2 * h)
        assert _fd_rel_err(fd1, kernel_eval(k, x, x2, 1), 1e-3 * sf / l) < 1e-6
        fd2 = (kernel_eval(k, x, x2 + h, 1) - kernel_eval(k, x, x2 - h, 1)) / (2 * h)
        assert _fd_rel_err(fd2, kernel_eval(k, x, x2, 2), 1e-3 * sf / l**2) < 1e-6
        g_sf, g_l = kernel_log_gradients(k, x, x2)
        eps = 1e-6
        for j, g in enumerate((g_sf, g_l)):
            th = k.log_params
            up, dn = th.copy(), th.copy()
            up[j] += eps
            dn[j] -= eps
            fd = (kernel_eval(k.with_log_params(up), x, x2)
                  - kernel_eval(k.with_log_params(dn), x, x2)) / (2 * eps)
            assert _fd_rel_err(fd, g[0, 0], 1e-3 * sf) < 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_condition_matches_brute_force(kind):
    rng = np.random.default_rng(2)
    for _ in range(30):
        inst = random_instance(rng, kind)
        post = gp_condition(_problem(inst), inst[5])
        mB, cB, mg, cg = joint_condition(*inst[0], *inst[1:])
        np.testing.assert_allclose(post.mean_B, mB, atol=1e-10)
        np.testing.assert_allclose(post.cov_B, cB, atol=1e-10)
        np.testing.assert_allclose(post.var_B, np.diag(cB), atol=1e-10)
        np.testing.assert_allclose(post.mean_g, mg, atol=1e-10)
        np.testing.assert_allclose(post.cov_g, cg, atol=1e-10)


def test_zero_measurements_give_prior():
    k = Kernel("matern_5_2", 1.5, 0.2)
    p = GPEdgeProblem([], [], [], [], k)
    grid = np.linspace(0, 1, 4)
    post = gp_condition(p, grid)
    np.testing.assert_array_equal(post.mean_B, 0.0)
    np.testing.assert_allclose(post.cov_B, k(grid, grid))
    np.testing.assert_allclose(post.cov_g, k(grid, grid, 2))


def test_interpolation_limit():
    p = GPEdgeProblem([0.5], [0.8], [1.0], [1e-9], Kernel("squared_exponential", 1.0, 0.3))
    post = gp_condition(p, [0.5])
    assert post.mean_B[0] == pytest.approx(0.8, abs=1e-6)
    assert post.var_B[0] == pytest.approx(0.0, abs=1e-6)


def test_posterior_variance_below_prior():
    rng = np.random.default_rng(3)
    for kind in KINDS:
        inst = random_instance(rng, kind)
        p = _problem(inst)
        post = gp_condition(p, inst[5])
        prior_g = p.kernel(inst[5], inst[5], 2)
        assert np.all(post.var_B <= p.kernel.sigma_f + 1e-10)
        assert np.all(np.diag(post.cov_g) <= np.diag(prior_g) + 1e-10)


def test_lml_zero_data_and_scalar_case():
    k = Kernel("matern_3_2", 1.2, 0.3)
    p = GPEdgeProblem([0.1, 0.4, 0.7], [0.0, 0.0, 0.0], [1.0, 0.5, 0.2], [0.1, 0.1, 0.2], k)
    Ky = np.array([[1.0, 0.5, 0.2]]).T * k([0.1, 0.4, 0.7], [0.1, 0.4, 0.7]) * np.array(
        [1.0, 0.5, 0.2]) + np.diag([0.01, 0.01, 0.04])
    val, _ = log_marginal_likelihood(p)
    assert val == pytest.approx(-0.5 * np.linalg.slogdet(Ky)[1], rel=1e-12)
    p1 = GPEdgeProblem([0.3], [0.7], [1.0], [0.2], k)
    val1, _ = log_marginal_likelihood(p1)
    s2 = 1.2 + 0.04
    assert val1 == pytest.approx(-0.5 * (np.log(s2) + 0.49 / s2), rel=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_lml_gradient_finite_difference(kind):
    rng = np.random.default_rng(4)
    for _ in range(20):
        inst = random_instance(rng, kind)
        p = _problem(inst).with_kernel(Kernel(kind, np.exp(rng.uniform(-1, 1)),
                                              np.exp(rng.uniform(-2, 0))),
                                       noise_scale=float(np.exp(rng.uniform(-0.5, 0.5))))
        val, grad = log_marginal_likelihood(p, optimize_noise=True)
        th = np.r_[p.kernel.log_params, np.log(p.noise_scale)]
        fd = np.empty(3)
        for j in range(3):
            up, dn = th.copy(), th.copy()
            up[j] += 1e-6
            dn[j] -= 1e-6
            f = [log_marginal_likelihood(p.with_kernel(p.kernel.with_log_params(t[:2]),
                                                       float(np.exp(t[2]))))[0] for t in (up, dn)]
            fd[j] = (f[0] - f[1]) / 2e-6
        assert np.max(np.abs(fd - grad)) <= 1e-5 * max(np.max(np.abs(grad)), 1e-3)


def test_lml_permutation_invariant():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, "matern_5_2", n_max=8)
    p = _problem(inst)
    order = rng.permutation(p.n)
    a, _ = log_marginal_likelihood(p)
    b, _ = log_marginal_likelihood(p.permuted(order))
    assert a == pytest.approx(b, abs=1e-10)


def test_cholesky_jitter():
    K = np.ones((3, 3))
    L, jitter = cholesky_jitter(K)
    assert jitter > 0
    np.testing.assert_allclose(L @ L.T, K + jitter * np.eye(3), atol=1e-12)
    with pytest.raises(ConditioningError) as info:
        cholesky_jitter(-np.eye(3))
    assert info.value.condition_estimate is not None


def test_problem_validation():
    with pytest.raises(InvalidArgumentError):
        GPEdgeProblem([0.0, 1.0], [0.0], [1.0, 1.0], [0.1, 0.1])
    with pytest.raises(InvalidArgumentError):
        GPEdgeProblem([0.0], [0.0], [1.0], [0.0])


def _prior_sample(kind, sf, l, x, noise, rng):
    K = kernel_blocks(kind, sf, l, x, x)[0] + 1e-10 * np.eye(x.size)
    return linalg.cholesky(K, lower=True) @ rng.standard_normal(x.size) + noise * rng.standard_normal(x.size)


def test_hyperparameter_recovery():
    # x spans 100 length-scales so the prior variance is identifiable
    rng = np.random.default_rng(6)
    x = np.linspace(0.0, 5.0, 200)
    hits = 0
    for rep in range(50):
        y = _prior_sample("squared_exponential", 1.0, 0.05, x, 1e-3, rng)
        p = GPEdgeProblem(x, y, np.ones(200), np.full(200, 1e-3))
        fit = optimize_hyperparameters(p, ["squared_exponential"], n_starts=5, seed=rep)
        err = np.abs(fit.kernel.log_params - np.log([1.0, 0.05]))
        hits += bool(np.all(err < 0.3))
    assert hits >= 45


def test_kernel_selection_prefers_generating_kind():
    rng = np.random.default_rng(7)
    x = np.linspace(0.0, 5.0, 200)
    wins = 0
    for rep in range(50):
        y = _prior_sample("matern_3_2", 1.0, 0.1, x, 1e-2, rng)
        p = GPEdgeProblem(x, y, np.ones(200), np.full(200, 1e-2))
        fit = optimize_hyperparameters(p, ["squared_exponential", "matern_3_2"], n_starts=2,
                                       seed=rep)
        wins += fit.kernel.kind == "matern_3_2"
    assert wins > 25


def test_start_at_optimum_stays():
    rng = np.random.default_rng(8)
    x = np.linspace(0.0, 2.0, 60)
    y = _prior_sample("squared_exponential", 1.0, 0.1, x, 1e-2, rng)
    p = GPEdgeProblem(x, y, np.ones(60), np.full(60, 1e-2))
    best = optimize_hyperparameters(p, ["squared_exponential"], n_starts=5)
    again = optimize_hyperparameters(p, [best.kernel], n_starts=0)
    _, grad = log_marginal_likelihood(p.with_kernel(again.kernel))
    assert np.linalg.norm(grad) < 1e-6
    assert again.value == pytest.approx(best.value, abs=1e-9)


def test_optimizer_failure_reports_starts():
    with pytest.raises(InvalidArgumentError):
        optimize_hyperparameters(GPEdgeProblem([0.0, 1.0], [0.0, 1.0], [1.0, 1.0], [0.1, 0.1]), [])
    p = GPEdgeProblem([0.0, 1.0], [0.0, 1.0], [1.0, 1.0], [0.1, 0.1])
    with pytest.raises(OptimizationError) as info:
        optimize_hyperparameters(p, ["squared_exponential"], n_starts=0)
    assert info.value.starts == []
