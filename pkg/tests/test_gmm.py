"""GMM alignment and MAP pooling tests.

Posteriors are checked against a direct Bayes-rule oracle computed with
plain density evaluation; MAP pooling is checked against its closed-form
identities (one-hot posteriors with zero relevance equal state-mean
pooling, infinite relevance recovers the running mean exactly).
"""

import numpy as np
import pytest

from tdsv.gmm import (
    PhraseGMM,
    RunningMean,
    gmm_posteriors,
    gmm_train,
    map_pool,
    map_pool_backward,
    update_running_mean,
)
from tdsv.hmm import build_alignment_matrix, hmm_pool

EPS = 1e-6


def finite_diff(fn, x, eps=EPS):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        grad[i] = (fn(xp) - fn(xm)) / (2.0 * eps)
    return grad


def random_gmm(rng, c, d):
    w = rng.uniform(0.5, 1.5, size=c)
    return PhraseGMM(
        "p",
        w / w.sum(),
        rng.normal(size=(c, d)),
        rng.uniform(0.5, 2.0, size=(c, d)),
    )


def bayes_posteriors(gmm, x):
    """Direct Bayes rule with plain (non-log) density evaluation."""
    t = x.shape[1]
    dens = np.zeros((t, gmm.n_components))
    for c in range(gmm.n_components):
        diff = x.T - gmm.means[c]
        quad = (diff**2 / gmm.covariances[c]).sum(axis=1)
        norm = np.sqrt((2.0 * np.pi) ** gmm.dim * np.prod(gmm.covariances[c]))
        dens[:, c] = gmm.weights[c] * np.exp(-0.5 * quad) / norm
    return dens / dens.sum(axis=1, keepdims=True)


# -------------------------------------------------------------- posteriors


@pytest.mark.parametrize("seed", range(30))
def test_posteriors_match_direct_bayes_rule(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 6))
    gmm = random_gmm(rng, c, 3)
    x = rng.normal(size=(3, 12))
    got = gmm_posteriors(gmm, x)
    np.testing.assert_allclose(got, bayes_posteriors(gmm, x), atol=1e-10)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-12)


def test_posteriors_survive_extreme_inputs():
    # far-away frames underflow plain densities but not the log domain
    gmm = random_gmm(np.random.default_rng(0), 3, 2)
    x = np.full((2, 4), 100.0)
    got = gmm_posteriors(gmm, x)
    assert np.isfinite(got).all()
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-12)


def test_posteriors_reject_dim_mismatch():
    gmm = random_gmm(np.random.default_rng(0), 2, 3)
    with pytest.raises(ValueError):
        gmm_posteriors(gmm, np.zeros((4, 5)))


# ---------------------------------------------------------------- training


def test_gmm_train_loglik_is_nondecreasing():
    rng = np.random.default_rng(0)
    centers = rng.normal(scale=5.0, size=(3, 2))
    utts = [
        (centers[rng.integers(0, 3, size=40)].T + 0.3 * rng.normal(size=(2, 40)))
        for _ in range(3)
    ]
    gmm = gmm_train(utts, 3, iterations=15)
    lls = gmm.train_loglik
    assert len(lls) == 15
    assert all(b >= a - 1e-6 for a, b in zip(lls, lls[1:]))
    np.testing.assert_allclose(gmm.weights.sum(), 1.0, atol=1e-12)
    assert (gmm.covariances >= 1e-3).all()


def test_gmm_train_is_seed_deterministic_and_validates_frame_count():
    rng = np.random.default_rng(0)
    utts = [rng.normal(size=(2, 30)) for _ in range(2)]
    a = gmm_train(utts, 3, iterations=5, seed=1)
    b = gmm_train(utts, 3, iterations=5, seed=1)
    np.testing.assert_array_equal(a.means, b.means)
    with pytest.raises(ValueError):
        gmm_train([rng.normal(size=(2, 10))], 4)


def test_gmm_train_separates_planted_clusters():
    rng = np.random.default_rng(0)
    centers = np.array([[-8.0, 0.0], [8.0, 0.0]])
    frames = centers[rng.integers(0, 2, size=200)].T + 0.2 * rng.normal(size=(2, 200))
    gmm = gmm_train([frames], 2, iterations=20)
    got = np.sort(gmm.means[:, 0])
    np.testing.assert_allclose(got, [-8.0, 8.0], atol=0.3)


# ----------------------------------------------------------------- pooling


def test_map_pool_one_hot_zero_tau_equals_statewise_mean():
    rng = np.random.default_rng(0)
    feat = rng.normal(size=(3, 7))
    align = build_alignment_matrix([0, 0, 1, 1, 2, 2, 2], 3)
    mu = rng.normal(size=(3, 3))
    got = map_pool(feat, align, RunningMean(mu), 0.0)
    np.testing.assert_array_equal(got, hmm_pool(feat, align))


def test_map_pool_huge_tau_recovers_running_mean():
    rng = np.random.default_rng(0)
    feat = rng.normal(size=(3, 7))
    gamma = np.abs(rng.normal(size=(7, 4)))
    gamma /= gamma.sum(axis=1, keepdims=True)
    mu = rng.normal(size=(3, 4))
    got = map_pool(feat, gamma, RunningMean(mu), 1e12)
    np.testing.assert_allclose(got, mu, atol=1e-6)


def test_map_pool_zero_mass_component_is_exactly_the_running_mean():
    rng = np.random.default_rng(0)
    feat = rng.normal(size=(3, 5))
    gamma = np.zeros((5, 2))
    gamma[:, 0] = 1.0  # component 1 gets no posterior mass at all
    mu = rng.normal(size=(3, 2))
    got = map_pool(feat, gamma, RunningMean(mu), 7.5)
    np.testing.assert_array_equal(got[:, 1], mu[:, 1])  # exact, not approximate


def test_map_pool_is_convex_combination_oracle():
    rng = np.random.default_rng(1)
    feat = rng.normal(size=(2, 6))
    gamma = np.abs(rng.normal(size=(6, 3)))
    gamma /= gamma.sum(axis=1, keepdims=True)
    mu = rng.normal(size=(2, 3))
    tau = 4.0
    got = map_pool(feat, gamma, RunningMean(mu), tau)
    nc = gamma.sum(axis=0)
    data_mean = (feat @ gamma) / nc
    expect = (nc / (nc + tau)) * data_mean + (tau / (nc + tau)) * mu
    np.testing.assert_allclose(got, expect, atol=1e-12)


def test_map_pool_validates_tau():
    feat = np.zeros((2, 3))
    gamma = np.ones((3, 1))
    with pytest.raises(ValueError):
        map_pool(feat, gamma, RunningMean(np.zeros((2, 1))), -1.0)
    empty = np.zeros((3, 1))
    with pytest.raises(ValueError):
        map_pool(feat, empty, RunningMean(np.zeros((2, 1))), 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_map_pool_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    feat = rng.normal(size=(3, 8))
    gamma = np.abs(rng.normal(size=(8, 4)))
    gamma /= gamma.sum(axis=1, keepdims=True)
    mu = RunningMean(rng.normal(size=(3, 4)))
    tau = float(rng.uniform(0.0, 10.0))
    proj = rng.normal(size=(3, 4))
    grad = map_pool_backward(feat, gamma, mu, tau, proj)
    fd = finite_diff(lambda x: float((map_pool(x, gamma, mu, tau) * proj).sum()), feat)
    np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)


# ------------------------------------------------------------ running mean


def test_running_mean_update_matches_exponential_oracle():
    rng = np.random.default_rng(0)
    mu = RunningMean(rng.normal(size=(2, 3)), beta=0.1)
    batch = []
    for _ in range(4):
        x = rng.normal(size=(2, 6))
        g = np.abs(rng.normal(size=(6, 3)))
        g /= g.sum(axis=1, keepdims=True)
        batch.append((x, g))
    new = update_running_mean(mu, batch)
    num = sum(x @ g for x, g in batch)
    den = sum(g.sum(axis=0) for x, g in batch)
    f = num / den
    np.testing.assert_allclose(new.mean, 0.9 * mu.mean + 0.1 * f, atol=1e-12)
    assert new.batch_count == 1
    np.testing.assert_array_equal(mu.mean, mu.mean)  # input left untouched


def test_running_mean_keeps_unoccupied_components():
    mu = RunningMean(np.arange(6.0).reshape(2, 3), beta=0.5)
    x = np.ones((2, 4))
    gamma = np.zeros((4, 3))
    gamma[:, 0] = 1.0
    new = update_running_mean(mu, [(x, gamma)])
    # components 1 and 2 saw no mass: their value must not move
    np.testing.assert_array_equal(new.mean[:, 1:], mu.mean[:, 1:])
    np.testing.assert_allclose(new.mean[:, 0], 0.5 * mu.mean[:, 0] + 0.5, atol=1e-12)


def test_running_mean_rejects_empty_batch():
    with pytest.raises(ValueError):
        update_running_mean(RunningMean(np.zeros((2, 2))), [])
