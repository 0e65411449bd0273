"""Per-phrase GMM alignment with MAP supervector pooling.

A diagonal-covariance GMM is trained per phrase with EM; frame posteriors
form a soft alignment matrix.  Pooling shrinks each component's
data-weighted mean toward a running mean with strength controlled by the
relevance factor, so components with little posterior mass fall back to
the running mean.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "PhraseGMM",
    "RunningMean",
    "gmm_train",
    "gmm_posteriors",
    "map_pool",
    "map_pool_backward",
    "update_running_mean",
]

COV_FLOOR = 1e-3


@dataclass
class PhraseGMM:
    phrase_id: str
    weights: np.ndarray  # (C,), sums to 1
    means: np.ndarray  # (C, D)
    covariances: np.ndarray  # (C, D) diagonal, floored
    train_loglik: list = field(default_factory=list, repr=False, compare=False)

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]


@dataclass
class RunningMean:
    """Exponentially updated per-component mean, frozen at eval time."""

    mean: np.ndarray  # (D, C)
    beta: float = 0.01
    batch_count: int = 0

    def copy(self):
        return RunningMean(self.mean.copy(), self.beta, self.batch_count)


def _log_joint(gmm: PhraseGMM, x):
    """log w_c + log N(x_t; mu_c, Sigma_c) as a (T, C) matrix."""
    d = x.shape[0]
    const = (
        np.log(gmm.weights)
        - 0.5 * (d * np.log(2.0 * np.pi) + np.log(gmm.covariances).sum(axis=1))
    )  # (C,)
    diff = x.T[:, None, :] - gmm.means[None, :, :]  # (T, C, D)
    quad = -0.5 * np.einsum("tcd,cd->tc", diff * diff, 1.0 / gmm.covariances)
    return quad + const[None, :]


def gmm_posteriors(gmm: PhraseGMM, x):
    """Frame-to-component posterior matrix (T, C), rows sum to 1.

    Computed in the log domain with log-sum-exp, so no underflow for
    finite inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != gmm.dim:
        raise ValueError(f"feature dim {x.shape[0]} does not match GMM dim {gmm.dim}")
    lj = _log_joint(gmm, x)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def gmm_train(utterances, n_components, iterations=20, seed=0, phrase_id=""):
    """Diagonal-covariance EM over the pooled frames of one phrase.

    Initialization picks random distinct frames as means (fixed RNG seed),
    uniform weights and the global variance.  The data log-likelihood is
    recorded per EM iteration and is non-decreasing (up to floor effects).
    """
    frames = np.hstack([np.asarray(u, dtype=np.float64) for u in utterances])  # (D, N)
    d, n = frames.shape
    if n < 10 * n_components:
        raise ValueError(
            f"{n} frames are too few to train {n_components} components (need >= {10 * n_components})"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=n_components, replace=False)
    means = frames[:, idx].T.copy()  # (C, D)
    covariances = np.maximum(
        np.tile(frames.var(axis=1), (n_components, 1)), COV_FLOOR
    )
    weights = np.full(n_components, 1.0 / n_components)
    gmm = PhraseGMM(phrase_id, weights, means, covariances)

    logliks = []
    for _ in range(iterations):
        lj = _log_joint(gmm, frames)  # (N, C)
        norm = logsumexp(lj, axis=1)
        logliks.append(float(norm.sum()))
        gamma = np.exp(lj - norm[:, None])  # (N, C)
        nc = gamma.sum(axis=0)  # (C,)
        nc = np.maximum(nc, 1e-12)
        means = (gamma.T @ frames.T) / nc[:, None]
        second = (gamma.T @ (frames.T**2)) / nc[:, None]
        covariances = np.maximum(second - means**2, COV_FLOOR)
        weights = nc / nc.sum()
        gmm = PhraseGMM(phrase_id, weights, means, covariances)
    gmm.train_loglik = logliks
    return gmm


def map_pool(x, gamma, running_mean, tau):
    """MAP-adapted soft pooling: (D, T) x (T, C) -> (D, C) supervector.

    Component slice c is the convex combination of the posterior-weighted
    data mean and the running mean, with data weight n_c / (n_c + tau).
    """
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    mu = np.asarray(running_mean.mean if isinstance(running_mean, RunningMean) else running_mean, dtype=np.float64)
    if tau < 0:
        raise ValueError("relevance factor must be nonnegative")
    nc = gamma.sum(axis=0)  # (C,)
    if tau == 0.0 and np.any(nc <= 0.0):
        raise ValueError("tau=0 requires every component to have posterior mass")
    out = (x @ gamma + tau * mu) / (nc + tau)[None, :]
    # a component with zero posterior mass falls back to the running mean
    # exactly (no rounding through tau*mu/tau)
    empty = nc == 0.0
    if np.any(empty):
        out[:, empty] = mu[:, empty]
    return out


def map_pool_backward(x, gamma, running_mean, tau, upstream):
    """Gradient of map_pool wrt the input frames (posteriors and running
    mean are treated as constants)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    nc = gamma.sum(axis=0)
    if tau == 0.0 and np.any(nc <= 0.0):
        raise ValueError("tau=0 requires every component to have posterior mass")
    return (upstream / (nc + tau)[None, :]) @ gamma.T


def update_running_mean(running_mean: RunningMean, batch):
    """One exponential update of the running mean from a training batch.

    ``batch`` is a list of (x, gamma) pairs.  The batch estimate is the
    posterior-weighted mean over all batch frames; components with zero
    batch occupancy keep their previous value.
    """
    if not batch:
        raise ValueError("empty batch")
    d, c = running_mean.mean.shape
    num = np.zeros((d, c))
    den = np.zeros(c)
    for x, gamma in batch:
        x = np.asarray(x, dtype=np.float64)
        gamma = np.asarray(gamma, dtype=np.float64)
        num += x @ gamma
        den += gamma.sum(axis=0)
    occupied = den > 0.0
    f = running_mean.mean.copy()
    f[:, occupied] = num[:, occupied] / den[occupied]
    beta = running_mean.beta
    new_mean = (1.0 - beta) * running_mean.mean + beta * f
    return RunningMean(new_mean, beta, running_mean.batch_count + 1)
