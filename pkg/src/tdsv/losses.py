"""Training objectives: cross-entropy, triplet loss, the differentiable
AUC surrogate, and hard pair/triplet mining.

The AUC surrogate replaces the unit step in the pairwise ranking count by
a sigmoid of adjustable slope; the trainer maximizes it (equivalently,
minimizes one minus the surrogate).  Ties in the exact AUC count one half
(Mann-Whitney convention), which is the slope-to-infinity limit of the
surrogate.
"""

from dataclasses import dataclass, field

import numpy as np

from .nn import cosine_similarity, log_softmax, sigmoid, softmax

__all__ = [
    "PairBatch",
    "Triplet",
    "cross_entropy",
    "triplet_loss",
    "exact_auc",
    "aauc_loss",
    "mine_hard",
    "build_pair_batch",
]


@dataclass
class PairBatch:
    """Scores of same-identity and different-identity pairs in a batch.

    Index pairs refer back into the embedding list that produced each
    score, so gradients can be routed to the right embeddings.
    """

    pos_scores: np.ndarray
    neg_scores: np.ndarray
    pos_pairs: list = field(default_factory=list)
    neg_pairs: list = field(default_factory=list)


@dataclass
class Triplet:
    anchor: int
    positive: int
    negative: int


def cross_entropy(logits, label):
    """Negative log softmax probability of the true class.

    Returns (loss, gradient wrt logits); gradient = softmax - one_hot.
    """
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    if not 0 <= label < k:
        raise ValueError(f"label {label} outside [0, {k})")
    logp = log_softmax(logits)
    loss = -float(logp[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return loss, grad


def triplet_loss(s_ap, s_an, margin):
    """Similarity-form triplet loss max(0, margin - s_ap + s_an).

    Returns (loss, d/ds_ap, d/ds_an); gradients are zero when the margin
    is satisfied.
    """
    value = margin - s_ap + s_an
    if value > 0.0:
        return value, -1.0, 1.0
    return 0.0, 0.0, 0.0


def exact_auc(pos_scores, neg_scores):
    """Fraction of (positive, negative) pairs ranked correctly.

    Ties count one half.  Direct double-sum evaluation.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    diff = pos[:, None] - neg[None, :]
    wins = np.where(diff > 0.0, 1.0, np.where(diff == 0.0, 0.5, 0.0))
    return float(wins.sum() / (pos.size * neg.size))


def aauc_loss(pos_scores, neg_scores, alpha):
    """Sigmoid-relaxed AUC and its gradients wrt every score.

    Returns (aauc, grad_pos, grad_neg) where aauc is the mean over all
    (positive, negative) pairs of sigmoid(alpha * (s_pos - s_neg)).  The
    trainer maximizes this value, i.e. minimizes 1 - aauc.
    """
    if alpha <= 0.0:
        raise ValueError("sigmoid slope must be positive")
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    m = pos.size * neg.size
    s = sigmoid(alpha * (pos[:, None] - neg[None, :]))
    ds = alpha * s * (1.0 - s) / m
    return float(s.sum() / m), ds.sum(axis=1), -ds.sum(axis=0)


def _similarity_matrix(embeddings, scorer):
    n = len(embeddings)
    sim = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = scorer(embeddings[i], embeddings[j])
    return sim


def mine_hard(embeddings, speakers, scorer=cosine_similarity):
    """Hardest triplet per anchor.

    For every anchor the negative is the most similar different-speaker
    embedding and the positive the least similar same-speaker embedding;
    ties break toward the lowest index.  Anchors lacking a positive or a
    negative are skipped and counted.
    """
    speakers = list(speakers)
    n = len(embeddings)
    sim = _similarity_matrix(embeddings, scorer)
    triplets = []
    skipped = 0
    for a in range(n):
        same = [j for j in range(n) if j != a and speakers[j] == speakers[a]]
        diff = [j for j in range(n) if speakers[j] != speakers[a]]
        if not same or not diff:
            skipped += 1
            continue
        positive = min(same, key=lambda j: (sim[a, j], j))
        negative = min(diff, key=lambda j: (-sim[a, j], j))
        triplets.append(Triplet(a, positive, negative))
    return triplets, skipped


def build_pair_batch(
    embeddings,
    speakers,
    scorer=cosine_similarity,
    max_pos=None,
    max_neg=None,
):
    """All same/different-speaker pairs of a batch, optionally capped.

    Caps keep the hardest pairs: the lowest-scoring positives and the
    highest-scoring negatives.  The batch must contain at least two
    speakers and one same-speaker pair.
    """
    speakers = list(speakers)
    n = len(embeddings)
    sim = _similarity_matrix(embeddings, scorer)
    pos_pairs, neg_pairs = [], []
    for i in range(n):
        for j in range(i + 1, n):
            (pos_pairs if speakers[i] == speakers[j] else neg_pairs).append((i, j))
    if not pos_pairs or not neg_pairs:
        raise ValueError("batch needs both same-speaker and different-speaker pairs")
    pos_pairs.sort(key=lambda p: (sim[p], p))
    neg_pairs.sort(key=lambda p: (-sim[p], p))
    if max_pos is not None:
        pos_pairs = pos_pairs[:max_pos]
    if max_neg is not None:
        neg_pairs = neg_pairs[:max_neg]
    return PairBatch(
        pos_scores=np.array([sim[p] for p in pos_pairs]),
        neg_scores=np.array([sim[p] for p in neg_pairs]),
        pos_pairs=pos_pairs,
        neg_pairs=neg_pairs,
    )
