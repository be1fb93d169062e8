import math

import numpy as np
import pytest

from dkbo.gp import (GPError, GPModel, Hyperparams, fit_hyperparams, gram, kernel_deep,
                     kernel_rbf, log_marginal_likelihood, posterior)
from dkbo.net import init_net
from dkbo.pose import DEFAULT_BOUNDS, ProbePose, denormalize, latin_hypercube, latin_hypercube_array


def pose_from_unit(u):
    return ProbePose.from_array(denormalize(u))


def x_only_net():
    # embedding depends on the x coordinate alone
    net = init_net(0)
    for p in net.params:
        p[...] = 0.0
    net.weights[0][0, 0] = 1.0
    net.weights[1][0, 0] = 1.0
    net.weights[2][0, 0] = 1.0
    return net


# -- kernels ---------------------------------------------------------------

def test_rbf_same_pose():
    p = ProbePose(0, 0, 10, 0, 0, 0)
    assert kernel_rbf(p, p, Hyperparams(1.0, 0.1, 0.3)) == pytest.approx(1.1, abs=1e-15)


def test_rbf_at_sqrt2_lengths():
    ell = 0.2
    a = np.full(6, 0.3)
    b = a.copy()
    b[1] += ell * math.sqrt(2)
    val = kernel_rbf(pose_from_unit(a), pose_from_unit(b), Hyperparams(1.0, 0.0, ell))
    assert val == pytest.approx(math.exp(-1), abs=1e-12)


def test_rbf_far_limit():
    lo, hi = ProbePose(*DEFAULT_BOUNDS.lower), ProbePose(*DEFAULT_BOUNDS.upper)
    th = Hyperparams(1.0, 0.2, 1e-3)
    assert kernel_rbf(lo, hi, th) == 0.0
    assert kernel_rbf(lo, hi, th, same_index=True) == pytest.approx(0.2)


def test_deep_equal_embedding_fully_correlated():
    net = x_only_net()
    a = pose_from_unit([0.7, 0.0, 0.0, 0.0, 0.0, 0.0])
    b = pose_from_unit([0.7, 1.0, 1.0, 1.0, 1.0, 1.0])
    assert kernel_deep(a, b, Hyperparams(1.0, 0.0, 0.1), net) == pytest.approx(1.0, abs=1e-15)


def test_deep_one_length_apart():
    net = x_only_net()
    ell = 0.25
    a = pose_from_unit([0.2, 0.5, 0.5, 0.5, 0.5, 0.5])
    b = pose_from_unit([0.45, 0.5, 0.5, 0.5, 0.5, 0.5])
    val = kernel_deep(a, b, Hyperparams(2.0, 0.0, ell), net)
    assert val == pytest.approx(2 * math.exp(-0.5), abs=1e-12)


def test_deep_zero_net_is_constant_kernel():
    net = init_net(0)
    for p in net.params:
        p[...] = 0.0
    th = Hyperparams(0.7, 0.05, 0.3)
    poses = latin_hypercube(5, seed=1)
    K = gram(poses, "deep", th, net, jitter=0.0)
    expected = np.full((5, 5), 0.7) + 0.05 * np.eye(5)
    np.testing.assert_allclose(K, expected, atol=1e-15)


# -- Gram matrix ------------------------------------------------------------

def test_gram_single_pose():
    K = gram(latin_hypercube(1, seed=0), "rbf", Hyperparams(0.5, 0.1, 0.3), jitter=1e-8)
    np.testing.assert_allclose(K, [[0.6 + 1e-8]], rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", ["rbf", "deep"])
def test_gram_symmetric_and_factorizable(kind, rng):
    net = init_net(1)
    X = latin_hypercube_array(5, seed=int(rng.integers(1000)))
    K = gram(X, kind, Hyperparams(1.0, 0.0, 0.4), net, jitter=1e-8)
    assert np.max(np.abs(K - K.T)) <= 1e-12
    np.linalg.cholesky(K)


def test_gram_off_diagonal_has_no_noise():
    X = latin_hypercube_array(4, seed=2)
    X[1] = X[0]
    K = gram(X, "rbf", Hyperparams(1.0, 0.3, 0.4), jitter=0.0)
    assert K[0, 1] == pytest.approx(1.0)
    assert K[0, 0] == pytest.approx(1.3)


def test_deep_gram_depends_only_on_embedding():
    net = x_only_net()
    U = np.random.default_rng(3).random((6, 6))
    swapped = U.copy()
    swapped[:, 1:] = swapped[::-1, 1:]  # scramble every coordinate except x
    th = Hyperparams(1.0, 0.01, 0.2)
    np.testing.assert_array_equal(gram(denormalize(U), "deep", th, net),
                                  gram(denormalize(swapped), "deep", th, net))


# -- posterior ------------------------------------------------------------------

def dense_posterior(U, y, ustar, th, jitter):
    # independent oracle: explicit Gram assembly and dense solves
    n = len(y)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            d2 = sum((U[i][k] - U[j][k]) ** 2 for k in range(6))
            K[i, j] = th.sigma_r * math.exp(-d2 / (2 * th.length ** 2))
        K[i, i] += th.sigma_w + jitter
    k = np.array([th.sigma_r * math.exp(-sum((ustar[m] - U[i][m]) ** 2 for m in range(6))
                                        / (2 * th.length ** 2)) for i in range(n)])
    off = sum(y) / n
    mean = off + k @ np.linalg.solve(K, np.asarray(y) - off)
    var = th.sigma_r - k @ np.linalg.solve(K, k)
    return mean, var


def test_posterior_matches_dense_oracle():
    U = np.array([[0.2, 0.5, 0.5, 0.5, 0.5, 0.5], [0.6, 0.5, 0.5, 0.5, 0.5, 0.5]])
    y = np.array([0.3, 0.9])
    th = Hyperparams(0.8, 0.05, 0.35)
    gp = GPModel("rbf", theta=th)
    gp.set_data(denormalize(U), y)
    for x in (0.0, 0.35, 0.45, 0.9):
        ustar = np.array([x, 0.5, 0.5, 0.5, 0.5, 0.5])
        mean, var = posterior(gp, pose_from_unit(ustar))
        m_ref, v_ref = dense_posterior(U, y, ustar, th, gp.jitter)
        assert mean == pytest.approx(m_ref, abs=1e-10)
        assert var == pytest.approx(v_ref, abs=1e-10)


@pytest.mark.parametrize("kind", ["rbf", "deep"])
def test_noise_free_interpolation(kind):
    net = init_net(2)
    X = latin_hypercube_array(12, seed=5)
    y = np.random.default_rng(5).random(12)
    # length-scale below the smallest embedding gap keeps the 1D Gram well conditioned
    gap = np.min(np.diff(np.sort(net.embed(X))))
    th = Hyperparams(1.0, 0.0, 0.5 if kind == "rbf" else 0.5 * gap)
    gp = GPModel(kind, net=net, theta=th)
    gp.set_data(X, y)
    mean, var = gp.predict(X)
    assert np.max(np.abs(mean - y)) < 1e-6
    assert np.max(var) <= 1e-6


def test_prior_reversion_far_away():
    gp = GPModel("rbf", theta=Hyperparams(0.6, 0.0, 1e-3))
    X = np.vstack([DEFAULT_BOUNDS.lower, DEFAULT_BOUNDS.lower + 0.001 * DEFAULT_BOUNDS.width])
    y = np.array([0.2, 0.4])
    gp.set_data(X, y)
    mean, var = posterior(gp, ProbePose(*DEFAULT_BOUNDS.upper))
    assert mean == pytest.approx(0.3)
    assert var == pytest.approx(0.6)


def test_variance_bounded_by_prior_and_shrinks_with_data(rng):
    th = Hyperparams(0.9, 0.0, 0.3)
    X = latin_hypercube_array(15, seed=7)
    y = rng.random(15)
    Q = latin_hypercube_array(200, seed=8)
    prev = None
    for n in range(1, 16):
        gp = GPModel("rbf", theta=th)
        gp.set_data(X[:n], y[:n])
        _, var = gp.predict(Q)
        assert np.all(var <= th.sigma_r + 1e-12)
        if prev is not None:
            assert np.all(var <= prev + 1e-9)
        prev = var


def test_predict_without_data():
    with pytest.raises(GPError):
        GPModel("rbf").predict(latin_hypercube_array(1, seed=0))


def test_deep_model_requires_net():
    with pytest.raises(GPError):
        GPModel("deep")


def test_cache_invalidated_on_theta_change():
    gp = GPModel("rbf", theta=Hyperparams(1.0, 0.0, 0.3))
    X = latin_hypercube_array(5, seed=1)
    gp.set_data(X, np.arange(5.0))
    m1, _ = gp.predict(X[:1] * 0.5)
    gp.set_hyperparams(Hyperparams(1.0, 0.0, 0.05))
    m2, _ = gp.predict(X[:1] * 0.5)
    assert m1[0] != m2[0]


# -- evidence and fitting -----------------------------------------------------

def test_lml_single_point():
    th = Hyperparams(0.7, 0.2, 0.3)
    gp = GPModel("rbf", theta=th)
    gp.set_data(latin_hypercube_array(1, seed=0), [0.4])
    v = 0.7 + 0.2 + gp.jitter
    val, _ = log_marginal_likelihood(gp)
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi * v), abs=1e-12)


@pytest.mark.parametrize("kind", ["rbf", "deep"])
@pytest.mark.parametrize("seed", range(5))
def test_lml_gradient_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    gp = GPModel(kind, net=init_net(seed))
    gp.set_data(latin_hypercube_array(6, seed=seed), rng.random(6))
    z = rng.uniform(-2, 1, size=3)
    if kind == "deep":
        z[2] = math.log(np.std(gp._feats) + 1e-3)
    _, g = gp.log_marginal_likelihood(z, jitter=1e-8, with_grad=True)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        num = (gp.log_marginal_likelihood(z + e, jitter=1e-8)
               - gp.log_marginal_likelihood(z - e, jitter=1e-8)) / (2 * h)
        assert abs(g[i] - num) / max(abs(g[i]), abs(num), 1e-8) < 1e-5


def sample_gp_prior(X, th, seed):
    gp = GPModel("rbf", theta=th)
    K = gram(X, "rbf", th, jitter=1e-10)
    return np.random.default_rng(seed).multivariate_normal(np.zeros(len(X)), K)


def test_fit_recovers_length_scale():
    th0 = Hyperparams(1.0, 1e-3, 0.6)
    X = latin_hypercube_array(40, seed=21)
    y = sample_gp_prior(X, th0, 21)
    gp = GPModel("rbf")
    gp.set_data(X, y)
    th = fit_hyperparams(gp, seed=0)
    assert 0.5 * th0.length <= th.length <= 2 * th0.length


def test_fit_constant_observations_kills_signal_variance():
    gp = GPModel("rbf")
    gp.set_data(latin_hypercube_array(10, seed=2), np.full(10, 0.5))
    th = fit_hyperparams(gp, seed=1)
    assert th.sigma_r <= math.exp(-5)


def test_fit_ascends_from_every_start():
    X = latin_hypercube_array(12, seed=4)
    y = np.sin(6 * X[:, 0] / 0.1) * 0.3 + 0.5
    gp = GPModel("rbf", theta=Hyperparams(0.1, 0.01, 0.3))
    gp.set_data(X, y)
    start = gp.log_marginal_likelihood()
    rng = np.random.default_rng(9)
    starts = rng.uniform(-6, 4, size=(5, 3))
    th, ok = gp.fit(n_restarts=5, seed=9)
    best = gp.log_marginal_likelihood()
    assert ok
    assert best >= start
    assert all(best >= gp.log_marginal_likelihood(z) for z in starts)
    assert np.all((th.log >= -6 - 1e-9) & (th.log <= 4 + 1e-9))


def test_fit_deterministic():
    X = latin_hypercube_array(8, seed=1)
    y = np.random.default_rng(1).random(8)
    thetas = []
    for _ in range(2):
        gp = GPModel("rbf")
        gp.set_data(X, y)
        thetas.append(fit_hyperparams(gp, seed=4))
    assert thetas[0] == thetas[1]


def test_duplicate_observation_does_not_lower_best_evidence():
    X = latin_hypercube_array(10, seed=3)
    y = 0.5 + 0.3 * np.cos(3 * (X[:, 2] - 12) / 15)
    gp = GPModel("rbf", theta=Hyperparams(0.1, 0.01, 0.5))
    gp.set_data(X, y)
    gp.fit(seed=0)
    base = gp.log_marginal_likelihood()
    dup = GPModel("rbf", theta=gp.theta)
    dup.set_data(np.vstack([X, X[:1]]), np.append(y, y[0]))
    dup.fit(seed=0)
    assert dup.theta.sigma_w > 0
    assert dup.log_marginal_likelihood() >= base


def test_fit_needs_two_points():
    gp = GPModel("rbf")
    gp.set_data(latin_hypercube_array(1, seed=0), [0.3])
    with pytest.raises(GPError):
        gp.fit()
