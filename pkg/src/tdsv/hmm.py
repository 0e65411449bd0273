"""Per-phrase left-to-right HMM alignment.

One HMM is trained per phrase by segmental (Viterbi) re-estimation with
diagonal-Gaussian state emissions.  Decoding is forced to start in the
first state and end in the last, so every state covers at least one frame
whenever T >= Q.  The resulting hard alignment matrix drives the
supervector pooling and its hand-derived backward pass.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PhraseHMM",
    "hmm_train",
    "viterbi_decode",
    "build_alignment_matrix",
    "hmm_pool",
    "hmm_pool_backward",
]

VAR_FLOOR = 1e-3
TRANS_FLOOR = 1e-3


@dataclass
class PhraseHMM:
    phrase_id: str
    means: np.ndarray  # (Q, D)
    variances: np.ndarray  # (Q, D), floored
    advance_prob: np.ndarray  # (Q,), advance_prob[Q-1] == 0 (final self-loop = 1)
    train_loglik: list = field(default_factory=list, repr=False, compare=False)

    @property
    def n_states(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]


def _log_gauss(x, means, variances):
    """Per-frame per-state diagonal Gaussian log-density, (T, Q)."""
    # x: (D, T); means/variances: (Q, D)
    d = x.shape[0]
    const = -0.5 * (d * np.log(2.0 * np.pi) + np.log(variances).sum(axis=1))  # (Q,)
    diff = x.T[:, None, :] - means[None, :, :]  # (T, Q, D)
    quad = -0.5 * np.einsum("tqd,qd->tq", diff * diff, 1.0 / variances)
    return quad + const[None, :]


def viterbi_decode(hmm: PhraseHMM, feat):
    """Best forced left-to-right state sequence for one utterance.

    Log-domain dynamic programming with start forced to state 0 and end
    forced to state Q-1.  Ties prefer the self-loop.  Returns a length-T
    integer vector of states in {0, ..., Q-1}.
    """
    x = np.asarray(feat, dtype=np.float64)
    q = hmm.n_states
    t_len = x.shape[1]
    if t_len < q:
        raise ValueError(
            f"utterance of {t_len} frames cannot cover {q} states (no valid path)"
        )
    emis = _log_gauss(x, hmm.means, hmm.variances)  # (T, Q)
    adv = np.clip(hmm.advance_prob, TRANS_FLOOR, 1.0 - TRANS_FLOOR)
    log_stay = np.log(1.0 - adv)
    log_adv = np.log(adv)
    log_stay = log_stay.copy()
    log_stay[-1] = 0.0  # final state self-loop probability 1

    neg = -np.inf
    delta = np.full((t_len, q), neg)
    back = np.zeros((t_len, q), dtype=np.int64)
    delta[0, 0] = emis[0, 0]
    for t in range(1, t_len):
        stay = delta[t - 1] + log_stay
        move = np.full(q, neg)
        move[1:] = delta[t - 1, :-1] + log_adv[:-1]
        # tie -> prefer self-loop (stay)
        take_stay = stay >= move
        delta[t] = np.where(take_stay, stay, move) + emis[t]
        back[t] = np.where(take_stay, np.arange(q), np.arange(q) - 1)

    if not np.isfinite(delta[t_len - 1, q - 1]):
        raise ValueError("no valid left-to-right path found")
    path = np.zeros(t_len, dtype=np.int64)
    path[-1] = q - 1
    for t in range(t_len - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def path_logprob(hmm: PhraseHMM, feat, path):
    """Log probability of a given forced path (used by training monitor)."""
    x = np.asarray(feat, dtype=np.float64)
    emis = _log_gauss(x, hmm.means, hmm.variances)
    adv = np.clip(hmm.advance_prob, TRANS_FLOOR, 1.0 - TRANS_FLOOR)
    log_stay = np.log(1.0 - adv)
    log_stay[-1] = 0.0
    log_adv = np.log(adv)
    lp = emis[0, path[0]]
    for t in range(1, len(path)):
        if path[t] == path[t - 1]:
            lp += log_stay[path[t]]
        else:
            lp += log_adv[path[t - 1]]
        lp += emis[t, path[t]]
    return lp


def build_alignment_matrix(path, n_states):
    """One-hot (T, Q) matrix from a decoded state sequence."""
    path = np.asarray(path, dtype=np.int64)
    a = np.zeros((len(path), n_states))
    a[np.arange(len(path)), path] = 1.0
    return a


def _uniform_paths(utterances, q):
    paths = []
    for x in utterances:
        t_len = x.shape[1]
        paths.append(np.minimum((np.arange(t_len) * q) // t_len, q - 1))
    return paths


def _reestimate(utterances, paths, q, phrase_id):
    d = utterances[0].shape[0]
    sums = np.zeros((q, d))
    sqsums = np.zeros((q, d))
    counts = np.zeros(q)
    entries = np.zeros(q)
    for x, path in zip(utterances, paths):
        a = build_alignment_matrix(path, q)
        sums += a.T @ x.T
        sqsums += a.T @ (x.T**2)
        counts += a.sum(axis=0)
        entries += 1.0  # left-to-right: each state entered exactly once
    means = sums / counts[:, None]
    variances = np.maximum(sqsums / counts[:, None] - means**2, VAR_FLOOR)
    # advance count per non-final state equals the number of utterances
    advance = np.zeros(q)
    advance[:-1] = np.clip(entries[:-1] / counts[:-1], TRANS_FLOOR, 1.0 - TRANS_FLOOR)
    return PhraseHMM(phrase_id, means, variances, advance)


def hmm_train(utterances, n_states, iterations=10, phrase_id=""):
    """Segmental training: uniform split, then Viterbi realignment loops.

    Stops at the iteration limit or when the alignments reach a fixpoint.
    The best-path log-likelihood over the corpus is recorded per iteration
    and is non-decreasing (up to floor effects).
    """
    utterances = [np.asarray(u, dtype=np.float64) for u in utterances]
    if len(utterances) < 2:
        raise ValueError("need at least 2 utterances to train an HMM")
    for i, u in enumerate(utterances):
        if u.shape[1] < n_states:
            raise ValueError(
                f"utterance {i} has {u.shape[1]} frames, fewer than {n_states} states"
            )
    paths = _uniform_paths(utterances, n_states)
    hmm = _reestimate(utterances, paths, n_states, phrase_id)
    logliks = []
    for _ in range(iterations):
        new_paths = [viterbi_decode(hmm, u) for u in utterances]
        logliks.append(sum(path_logprob(hmm, u, p) for u, p in zip(utterances, new_paths)))
        if all(np.array_equal(p, np_) for p, np_ in zip(paths, new_paths)):
            break
        paths = new_paths
        hmm = _reestimate(utterances, paths, n_states, phrase_id)
    hmm.train_loglik = logliks
    return hmm


def hmm_pool(x, align):
    """State-wise mean pooling: (D, T) x (T, Q) -> (D, Q) supervector.

    Each column q of the output is the mean of the frames assigned to
    state q; requires every state to own at least one frame.
    """
    x = np.asarray(x, dtype=np.float64)
    align = np.asarray(align, dtype=np.float64)
    counts = align.sum(axis=0)
    if np.any(counts < 1.0):
        raise ValueError("alignment has an empty state; decoder contract violated")
    return (x @ align) / counts[None, :]


def hmm_pool_backward(x, align, upstream):
    """Gradient of hmm_pool wrt the input frames."""
    align = np.asarray(align, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    counts = align.sum(axis=0)
    if np.any(counts < 1.0):
        raise ValueError("alignment has an empty state; decoder contract violated")
    return (upstream / counts[None, :]) @ align.T
