"""Detection metrics: AUC, EER, minimum detection cost, DET curves.

All metrics consume a scored trial set (target and nontarget scores) and
are invariant to strictly increasing transforms of the scores.  The EER
is read from the ROC convex hull with linear interpolation, which is the
standard deterministic definition.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

__all__ = [
    "ScoredTrialSet",
    "DetCurve",
    "compute_eer",
    "compute_min_dcf",
    "compute_auc",
    "det_points",
    "eer_from_det",
]


@dataclass
class Trial:
    enroll_id: str
    test_id: str
    score: float
    is_target: bool


@dataclass
class ScoredTrialSet:
    trials: list

    def target_scores(self):
        return np.array([t.score for t in self.trials if t.is_target])

    def nontarget_scores(self):
        return np.array([t.score for t in self.trials if not t.is_target])


@dataclass
class DetCurve:
    """Operating points ordered by increasing threshold.

    ``p_fa`` is non-increasing and ``p_miss`` non-decreasing along the
    curve; deviate coordinates are standard-normal quantiles for DET
    plotting.
    """

    thresholds: np.ndarray
    p_fa: np.ndarray
    p_miss: np.ndarray

    def deviates(self, clip=1e-6):
        fa = np.clip(self.p_fa, clip, 1.0 - clip)
        miss = np.clip(self.p_miss, clip, 1.0 - clip)
        return norm.ppf(fa), norm.ppf(miss)


def _split(tar, non):
    tar = np.asarray(tar, dtype=np.float64)
    non = np.asarray(non, dtype=np.float64)
    if tar.size == 0 or non.size == 0:
        raise ValueError("metrics need at least one target and one nontarget trial")
    return tar, non


def _operating_points(tar, non):
    """Step-ROC operating points, one per distinct threshold.

    Accept when score >= threshold.  The first point is accept-all
    (P_fa=1, P_miss=0), the last reject-all (P_fa=0, P_miss=1).
    """
    thresholds = np.unique(np.concatenate([tar, non]))
    # one point below every score, then one point just above each distinct score
    p_fa = [1.0]
    p_miss = [0.0]
    ths = [-np.inf]
    for th in thresholds:
        p_fa.append(float(np.mean(non > th)))
        p_miss.append(float(np.mean(tar <= th)))
        ths.append(float(th))
    return np.array(ths), np.array(p_fa), np.array(p_miss)


def det_points(tar, non):
    """DET curve of a trial set: one point per distinct threshold."""
    tar, non = _split(tar, non)
    ths, p_fa, p_miss = _operating_points(tar, non)
    return DetCurve(ths, p_fa, p_miss)


def _roc_hull(p_fa, p_miss):
    """Upper convex hull of the ROC polyline in (P_fa, TPR) coordinates."""
    pts = sorted(zip(p_fa, 1.0 - p_miss))
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def _hull_eer(p_fa, p_miss):
    hull = _roc_hull(p_fa, p_miss)
    for (x1, y1), (x2, y2) in zip(hull[:-1], hull[1:]):
        m1 = 1.0 - y1
        m2 = 1.0 - y2
        if (m1 - x1) >= 0.0 >= (m2 - x2):
            denom = (x2 - x1) + (y2 - y1)
            if denom == 0.0:
                return 0.5 * (x1 + m1)
            s = (1.0 - y1 - x1) / denom
            return x1 + s * (x2 - x1)
    raise RuntimeError("ROC hull has no miss = false-alarm crossing")


def compute_eer(tar, non):
    """Equal error rate with linear interpolation on the ROC convex hull."""
    tar, non = _split(tar, non)
    _, p_fa, p_miss = _operating_points(tar, non)
    return float(_hull_eer(p_fa, p_miss))


def eer_from_det(curve: DetCurve):
    """EER read off an existing DET curve (same interpolation rule)."""
    return float(_hull_eer(curve.p_fa, curve.p_miss))


def compute_min_dcf(tar, non, p_target=0.001, c_miss=1.0, c_fa=1.0):
    """Normalized minimum detection cost over all thresholds."""
    tar, non = _split(tar, non)
    _, p_fa, p_miss = _operating_points(tar, non)
    cost = c_miss * p_target * p_miss + c_fa * (1.0 - p_target) * p_fa
    norm_cost = min(c_miss * p_target, c_fa * (1.0 - p_target))
    return float(cost.min() / norm_cost)


def compute_auc(tar, non):
    """AUC via the rank-based Mann-Whitney statistic (ties count half)."""
    tar, non = _split(tar, non)
    ranks = rankdata(np.concatenate([tar, non]))
    r_tar = ranks[: tar.size].sum()
    u = r_tar - tar.size * (tar.size + 1) / 2.0
    return float(u / (tar.size * non.size))
