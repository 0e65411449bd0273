"""Acoustic feature extraction: MFCC, deltas, interpolation, augmentation.

The default extractor produces 20 MFCCs per frame; with first and second
derivatives appended the feature matrix is 60 x T.  Matrices are stored
rows = feature dims, columns = frames.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, rfft

__all__ = [
    "MfccConfig",
    "extract_mfcc",
    "add_deltas",
    "interpolate_time",
    "random_erasing",
    "cepstral_mean_norm",
]

LOG_FLOOR = 1e-10


@dataclass
class MfccConfig:
    sample_rate: int = 16000
    frame_length: float = 0.025
    frame_shift: float = 0.010
    n_mels: int = 24
    n_ceps: int = 20
    preemphasis: float = 0.97
    fmin: float = 20.0
    fmax: float | None = None  # defaults to Nyquist


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, n_fft, sample_rate, fmin, fmax):
    """Triangular mel filterbank as an (n_mels, n_fft//2 + 1) matrix."""
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz = mel_to_hz(mels)
    bins = np.floor((n_fft + 1) * hz / sample_rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, mid, hi = bins[m], bins[m + 1], bins[m + 2]
        for k in range(lo, mid):
            if mid > lo:
                fb[m, k] = (k - lo) / (mid - lo)
        for k in range(mid, hi):
            if hi > mid:
                fb[m, k] = (hi - k) / (hi - mid)
    return fb


def extract_mfcc(samples, cfg: MfccConfig | None = None):
    """Standard MFCC pipeline on a mono waveform.

    Pre-emphasis, Hamming windowing, magnitude spectrum, mel filterbank,
    log with a fixed floor, DCT-II, keep the first ``n_ceps`` coefficients.
    Returns an (n_ceps, T) matrix.
    """
    cfg = cfg or MfccConfig()
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("waveform must be one-dimensional")
    win = int(round(cfg.frame_length * cfg.sample_rate))
    hop = int(round(cfg.frame_shift * cfg.sample_rate))
    if len(x) < win:
        raise ValueError(
            f"waveform of {len(x)} samples is shorter than one {win}-sample frame"
        )
    emph = np.concatenate([[x[0]], x[1:] - cfg.preemphasis * x[:-1]])
    n_frames = 1 + (len(emph) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emph[idx] * np.hamming(win)
    spec = np.abs(rfft(frames, n=win, axis=1))
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2.0
    fb = mel_filterbank(cfg.n_mels, win, cfg.sample_rate, cfg.fmin, fmax)
    logmel = np.log(np.maximum(spec @ fb.T, LOG_FLOOR))
    ceps = dct(logmel, type=2, norm="ortho", axis=1)[:, : cfg.n_ceps]
    return ceps.T.copy()


_DELTA_WINDOW = 2
# regression weights: sum_j j*(x_{t+j}) / sum_j j^2 over j in [-2, 2]
_DELTA_NORM = 2.0 * sum(j * j for j in range(1, _DELTA_WINDOW + 1))


def _delta(feat):
    d, t = feat.shape
    padded = np.pad(feat, ((0, 0), (_DELTA_WINDOW, _DELTA_WINDOW)), mode="edge")
    out = np.zeros_like(feat)
    for j in range(1, _DELTA_WINDOW + 1):
        out += j * (
            padded[:, _DELTA_WINDOW + j : _DELTA_WINDOW + j + t]
            - padded[:, _DELTA_WINDOW - j : _DELTA_WINDOW - j + t]
        )
    return out / _DELTA_NORM


def add_deltas(feat):
    """Append first- and second-order regression deltas (window +-2).

    Edge frames are replicated before the regression.  The output has
    three times the rows of the input.
    """
    feat = np.asarray(feat, dtype=np.float64)
    if feat.shape[1] < 5:
        raise ValueError("delta computation needs at least 5 frames")
    d1 = _delta(feat)
    d2 = _delta(d1)
    return np.vstack([feat, d1, d2])


def interpolate_time(feat, t_target):
    """Per-row linear interpolation onto ``t_target`` uniform points.

    Endpoints are preserved exactly; rows that are affine in time are
    reproduced exactly for any target length.
    """
    feat = np.asarray(feat, dtype=np.float64)
    t_raw = feat.shape[1]
    if t_raw < 2:
        raise ValueError("need at least 2 frames to interpolate")
    if t_target < 2:
        raise ValueError("target frame count must be at least 2")
    if t_target == t_raw:
        return feat.copy()
    src = np.arange(t_raw, dtype=np.float64)
    dst = np.linspace(0.0, t_raw - 1.0, t_target)
    return np.vstack([np.interp(dst, src, row) for row in feat])


def cepstral_mean_norm(feat):
    """Subtract the per-row (per-coefficient) mean over time."""
    feat = np.asarray(feat, dtype=np.float64)
    return feat - feat.mean(axis=1, keepdims=True)


def random_erasing(
    feat,
    p,
    rng,
    area_range=(0.02, 0.4),
    aspect_range=(0.3, 3.3),
):
    """Random Erasing on a feature matrix.

    With probability ``p`` a random rectangular block is replaced by the
    matrix mean value; otherwise the input is returned unchanged (as a
    copy).  Deterministic given the generator state.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("erase probability must lie in [0, 1]")
    feat = np.asarray(feat, dtype=np.float64)
    out = feat.copy()
    if rng.random() >= p:
        return out
    d, t = feat.shape
    frac = rng.uniform(*area_range)
    aspect = rng.uniform(*aspect_range)
    h = int(np.clip(round(d * np.sqrt(frac * aspect)), 1, d))
    w = int(np.clip(round(t * np.sqrt(frac / aspect)), 1, t))
    r0 = rng.integers(0, d - h + 1)
    c0 = rng.integers(0, t - w + 1)
    out[r0 : r0 + h, c0 : c0 + w] = feat.mean()
    return out
