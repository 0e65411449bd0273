"""On-disk formats: feature files, aligner models, embeddings,
checkpoints, manifests, score/key/DET text files and config files.

All binary formats are little-endian with a 4-byte magic and a u32
version.  Writes go through a temp file plus rename so readers never see
a partial file.
"""

import hashlib
import os
import struct
import tempfile

import numpy as np

from .gmm import PhraseGMM, RunningMean
from .hmm import PhraseHMM

FEATURE_MAGIC = b"SVFM"
HMM_MAGIC = b"SVHM"
GMM_MAGIC = b"SVGM"
EMBED_MAGIC = b"SVEM"
CKPT_MAGIC = b"SVCK"
VERSION = 1


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write(path, text.encode("utf-8"))


def _read_magic(buf, magic, what):
    if buf[:4] != magic:
        raise ValueError(f"not a {what} file (bad magic {buf[:4]!r})")
    (version,) = struct.unpack("<I", buf[4:8])
    if version != VERSION:
        raise ValueError(f"unsupported {what} version {version}")
    return 8


# ---------------------------------------------------------------- features

def write_features(path, feat):
    """SVFM: magic, version, u32 D, u32 T, D*T f32 row-major."""
    feat = np.asarray(feat)
    d, t = feat.shape
    payload = FEATURE_MAGIC + struct.pack("<III", VERSION, d, t)
    payload += feat.astype("<f4").tobytes(order="C")
    atomic_write(path, payload)


def read_features(path):
    with open(path, "rb") as f:
        buf = f.read()
    off = _read_magic(buf, FEATURE_MAGIC, "feature")
    d, t = struct.unpack("<II", buf[off : off + 8])
    off += 8
    data = np.frombuffer(buf, dtype="<f4", count=d * t, offset=off)
    return data.reshape(d, t).astype(np.float64)


# ------------------------------------------------------------------- hmm

def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _unpack_str(buf, off):
    (n,) = struct.unpack("<I", buf[off : off + 4])
    off += 4
    return buf[off : off + n].decode("utf-8"), off + n


def _pack_f64(arr):
    return np.asarray(arr, dtype="<f8").tobytes(order="C")


def _unpack_f64(buf, off, shape):
    n = int(np.prod(shape))
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
    return arr.copy(), off + 8 * n


def write_hmm(path, hmm: PhraseHMM):
    q, d = hmm.means.shape
    payload = HMM_MAGIC + struct.pack("<I", VERSION)
    payload += _pack_str(hmm.phrase_id)
    payload += struct.pack("<II", q, d)
    payload += _pack_f64(hmm.means) + _pack_f64(hmm.variances)
    payload += _pack_f64(hmm.advance_prob)
    atomic_write(path, payload)


def read_hmm(path):
    with open(path, "rb") as f:
        buf = f.read()
    off = _read_magic(buf, HMM_MAGIC, "HMM model")
    phrase_id, off = _unpack_str(buf, off)
    q, d = struct.unpack("<II", buf[off : off + 8])
    off += 8
    means, off = _unpack_f64(buf, off, (q, d))
    variances, off = _unpack_f64(buf, off, (q, d))
    advance, off = _unpack_f64(buf, off, (q,))
    return PhraseHMM(phrase_id, means, variances, advance)


# ------------------------------------------------------------------- gmm

def write_gmm(path, gmm: PhraseGMM, running_mean: RunningMean, tau: float):
    c, d = gmm.means.shape
    payload = GMM_MAGIC + struct.pack("<I", VERSION)
    payload += _pack_str(gmm.phrase_id)
    payload += struct.pack("<II", c, d)
    payload += _pack_f64(gmm.weights) + _pack_f64(gmm.means) + _pack_f64(gmm.covariances)
    payload += _pack_f64(running_mean.mean)
    payload += struct.pack("<ddI", tau, running_mean.beta, running_mean.batch_count)
    atomic_write(path, payload)


def read_gmm(path):
    with open(path, "rb") as f:
        buf = f.read()
    off = _read_magic(buf, GMM_MAGIC, "GMM model")
    phrase_id, off = _unpack_str(buf, off)
    c, d = struct.unpack("<II", buf[off : off + 8])
    off += 8
    weights, off = _unpack_f64(buf, off, (c,))
    means, off = _unpack_f64(buf, off, (c, d))
    covs, off = _unpack_f64(buf, off, (c, d))
    mu, off = _unpack_f64(buf, off, (d, c))
    tau, beta, batch_count = struct.unpack("<ddI", buf[off : off + 20])
    gmm = PhraseGMM(phrase_id, weights, means, covs)
    return gmm, RunningMean(mu, beta, batch_count), tau


# -------------------------------------------------------------- embeddings

def write_embeddings(path, records):
    """SVEM: magic, version, u32 count, u32 dim, then (id, f32 vector)."""
    records = list(records)
    if records:
        dim = len(records[0][1])
    else:
        dim = 0
    payload = EMBED_MAGIC + struct.pack("<III", VERSION, len(records), dim)
    for rid, vec in records:
        vec = np.asarray(vec)
        if vec.shape != (dim,):
            raise ValueError("all embeddings must share one dimension")
        payload += _pack_str(rid)
        payload += vec.astype("<f4").tobytes()
    atomic_write(path, payload)


def read_embeddings(path):
    with open(path, "rb") as f:
        buf = f.read()
    off = _read_magic(buf, EMBED_MAGIC, "embedding")
    count, dim = struct.unpack("<II", buf[off : off + 8])
    off += 8
    records = []
    for _ in range(count):
        rid, off = _unpack_str(buf, off)
        vec = np.frombuffer(buf, dtype="<f4", count=dim, offset=off).astype(np.float64)
        off += 4 * dim
        records.append((rid, vec))
    return records


# -------------------------------------------------------------- checkpoint

def write_checkpoint(path, config_text: str, tensors: dict):
    """SVCK: magic, version, config echo, named f64 tensors, sha256."""
    payload = CKPT_MAGIC + struct.pack("<I", VERSION)
    payload += _pack_str(config_text)
    payload += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        payload += _pack_str(name)
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += _pack_f64(arr)
    payload += hashlib.sha256(payload).digest()
    atomic_write(path, payload)


def read_checkpoint(path):
    with open(path, "rb") as f:
        buf = f.read()
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError(f"checkpoint {path} failed its content checksum")
    off = _read_magic(body, CKPT_MAGIC, "checkpoint")
    config_text, off = _unpack_str(body, off)
    (n,) = struct.unpack("<I", body[off : off + 4])
    off += 4
    tensors = {}
    for _ in range(n):
        name, off = _unpack_str(body, off)
        (ndim,) = struct.unpack("<I", body[off : off + 4])
        off += 4
        shape = struct.unpack(f"<{ndim}I", body[off : off + 4 * ndim])
        off += 4 * ndim
        tensors[name], off = _unpack_f64(body, off, shape)
    return config_text, tensors


# ------------------------------------------------------- scores / keys / det

def write_scores(path, rows):
    """One `<enroll_id> <test_id> <score>` row per trial."""
    lines = [f"{e} {t} {s:.12g}" for e, t, s in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_scores(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            e, t, s = line.split()
            rows.append((e, t, float(s)))
    return rows


def write_key(path, rows):
    """One `<enroll_id> <test_id> target|nontarget` row per trial."""
    lines = [f"{e} {t} {'target' if tgt else 'nontarget'}" for e, t, tgt in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_key(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            e, t, lab = line.split()
            if lab not in ("target", "nontarget"):
                raise ValueError(f"bad trial label {lab!r}")
            rows.append((e, t, lab == "target"))
    return rows


def write_det(path, curve):
    lines = ["# threshold p_fa p_miss"]
    for th, fa, miss in zip(curve.thresholds, curve.p_fa, curve.p_miss):
        lines.append(f"{th:.12g} {fa:.12g} {miss:.12g}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ----------------------------------------------------------------- config

def parse_config_text(text, known_keys):
    """Line-based `key = value` config with `#` comments.

    Unknown keys are rejected so typos fail loudly.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected `key = value`: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known_keys:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = value
    return values
