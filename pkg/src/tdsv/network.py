"""Model architectures and training loops.

Four system variants share one implementation:

* type A: CNN front-end, global average pooling, softmax classifier;
* type B: no front-end, alignment pooling on the raw features;
* type C: CNN front-end, alignment pooling, softmax classifier;
* type D: type-C front-end plus a two-dense-layer back-end trained
  end-to-end with a triplet or differentiable-AUC objective, scoring
  pairs by cosine similarity on the back-end outputs.

Alignments are computed once per utterance by the externally trained
aligners; gradients flow through the pooling arithmetic only.  The
GMM-MAP pooling keeps one running mean per phrase which is updated each
training batch and frozen at evaluation time.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from . import losses
from .gmm import RunningMean
from .nn import Adam, Conv1d, Dense, ReLU, cosine_similarity, cosine_similarity_backward, softmax

__all__ = [
    "ArchitectureConfig",
    "Model",
    "UttData",
    "train_classifier",
    "train_bdk",
    "train_end_to_end",
    "enroll",
    "score_trial",
]


@dataclass
class ArchitectureConfig:
    arch_type: str = "C"  # A, B, C or D
    pooling: str = "hmm"  # avg, hmm or gmm_map
    input_dim: int = 60
    front_channels: tuple = (48, 48, 48)
    kernel_size: int = 3
    back_end: tuple = (512, 256)  # arch D dense widths
    n_states: int = 8  # alignment columns (Q or C)
    n_classes: int = 0
    loss: str = "cross_entropy"  # cross_entropy, triplet or aauc
    tau: float = 10.0
    beta: float = 0.01
    alpha: float = 10.0
    margin: float = 0.5
    lr: float = 3e-3
    epochs: int = 30
    batch_size: int = 32
    erasing_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.arch_type not in "ABCD":
            raise ValueError(f"unknown architecture type {self.arch_type!r}")
        if self.pooling not in ("avg", "hmm", "gmm_map"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.arch_type == "A" and self.pooling != "avg":
            raise ValueError("architecture A uses average pooling")
        if self.arch_type == "B":
            self.front_channels = ()
        if self.alpha <= 0:
            raise ValueError("aAUC slope must be positive")

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        casts = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in casts:
                raise ValueError(f"unknown config key {key!r}")
            t = casts[key]
            if t is tuple:
                kwargs[key] = tuple(int(x) for x in value.split(",") if x)
            elif t is int:
                kwargs[key] = int(value)
            elif t is float:
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)


@dataclass
class UttData:
    """One training/eval utterance: fixed-length features plus its
    precomputed alignment (None for average pooling)."""

    uid: str
    speaker_id: str
    phrase_id: str
    feat: np.ndarray  # (D0, T)
    align: np.ndarray | None  # (T, Q) hard or (T, C) soft
    label: int = -1


class Model:
    def __init__(self, config: ArchitectureConfig, rng=None):
        self.config = config
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, 29]))
        self.front = []
        in_ch = config.input_dim
        for out_ch in config.front_channels:
            self.front.append(Conv1d(in_ch, out_ch, config.kernel_size, rng=rng))
            self.front.append(ReLU())
            in_ch = out_ch
        self.feature_dim = in_ch
        if config.pooling == "avg":
            self.embed_dim = in_ch
        else:
            self.embed_dim = in_ch * config.n_states
        self.classifier = None
        if config.arch_type in "ABC" and config.n_classes > 0:
            self.classifier = Dense(self.embed_dim, config.n_classes, rng=rng)
        self.backend = []
        if config.arch_type == "D":
            w1, w2 = config.back_end
            self.backend = [
                Dense(self.embed_dim, w1, rng=rng),
                ReLU(),
                Dense(w1, w2, rng=rng),
            ]
        # per-phrase running means for gmm_map pooling, keyed by phrase id
        self.running_means: dict = {}
        self._pool_cache = None

    # ------------------------------------------------------------ params

    def params(self, include_classifier=True):
        ps = []
        for layer in self.front:
            ps.extend(layer.params())
        if include_classifier and self.classifier is not None:
            ps.extend(self.classifier.params())
        for layer in self.backend:
            ps.extend(layer.params())
        return ps

    # ----------------------------------------------------------- forward

    def front_forward(self, x):
        for layer in self.front:
            x = layer.forward(x)
        return x

    def front_backward(self, grad):
        for layer in reversed(self.front):
            grad = layer.backward(grad)
        return grad

    def _running_mean_for(self, phrase_id):
        rm = self.running_means.get(phrase_id)
        if rm is None:
            raise ValueError(f"no running mean initialized for phrase {phrase_id!r}")
        return rm

    def pool_forward(self, h, aligns, phrases, train=False):
        """Pool (B, D, T) front-end outputs into flat (B, E) embeddings.

        For gmm_map pooling in training mode the per-phrase running means
        are updated from the batch before pooling (batch-norm style); in
        eval mode they are frozen.
        """
        cfg = self.config
        b, d, t = h.shape
        if cfg.pooling == "avg":
            # average pooling is single-state alignment pooling, sharing
            # its arithmetic so the two modes agree bit-for-bit
            aligns = [np.ones((t, 1))] * b
        aligns = np.stack(aligns)  # (B, T, K)
        counts = aligns.sum(axis=1)  # (B, K)
        if cfg.pooling in ("avg", "hmm"):
            if np.any(counts < 1.0):
                raise ValueError("hard alignment with an empty state")
            pooled = np.einsum("bdt,btk->bdk", h, aligns) / counts[:, None, :]
            self._pool_cache = ("hmm", aligns, counts, None)
        else:
            if train:
                self._update_running_means(h, aligns, phrases)
            mu = np.stack([self._running_mean_for(p).mean for p in phrases])  # (B, D, K)
            denom = counts + cfg.tau  # (B, K)
            pooled = (np.einsum("bdt,btk->bdk", h, aligns) + cfg.tau * mu) / denom[:, None, :]
            self._pool_cache = ("gmm_map", aligns, denom, None)
        # component-major flattening: all dims of state 0, then state 1, ...
        return pooled.transpose(0, 2, 1).reshape(b, -1)

    def pool_backward(self, grad_flat):
        kind, aligns, counts_or_denom, _ = self._pool_cache
        b = grad_flat.shape[0]
        k = aligns.shape[2]
        grad_pooled = grad_flat.reshape(b, k, -1).transpose(0, 2, 1)  # (B, D, K)
        return np.einsum("bdk,btk->bdt", grad_pooled / counts_or_denom[:, None, :], aligns)

    def _update_running_means(self, h, aligns, phrases):
        """Eq.-style exponential update of per-phrase running means from
        the batch; a phrase seen for the first time adopts the batch mean."""
        beta = self.config.beta
        by_phrase = {}
        for i, p in enumerate(phrases):
            by_phrase.setdefault(p, []).append(i)
        for p, idxs in by_phrase.items():
            num = np.einsum("bdt,btk->dk", h[idxs], aligns[idxs])
            den = aligns[idxs].sum(axis=(0, 1))  # (K,)
            rm = self.running_means.get(p)
            if rm is None:
                f = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
                self.running_means[p] = RunningMean(f, beta, 1)
                continue
            f = rm.mean.copy()
            occ = den > 0
            f[:, occ] = num[:, occ] / den[occ]
            rm.mean = (1.0 - beta) * rm.mean + beta * f
            rm.batch_count += 1

    def embed_batch(self, feats, aligns, phrases, train=False):
        x = np.stack(feats)
        h = self.front_forward(x) if self.front else x
        return self.pool_forward(h, aligns, phrases, train=train)

    def embed_backward(self, grad_flat):
        grad_h = self.pool_backward(grad_flat)
        if self.front:
            return self.front_backward(grad_h)
        return grad_h

    def forward_embed(self, utt: UttData, train=False):
        """Embedding for one utterance (deterministic in eval mode)."""
        cfg = self.config
        if cfg.pooling != "avg" and utt.align is None:
            raise ValueError(f"utterance {utt.uid} has no alignment for {cfg.pooling} pooling")
        aligns = None if cfg.pooling == "avg" else [utt.align]
        return self.embed_batch([utt.feat], aligns, [utt.phrase_id], train=train)[0]

    def backend_forward(self, e):
        for layer in self.backend:
            e = layer.forward(e)
        return e

    def backend_backward(self, grad):
        for layer in reversed(self.backend):
            grad = layer.backward(grad)
        return grad

    # -------------------------------------------------------- checkpoints

    def tensors(self):
        out = {}
        conv_i = 0
        for layer in self.front:
            if isinstance(layer, Conv1d):
                out[f"front{conv_i}.weight"] = layer.weight.value
                out[f"front{conv_i}.bias"] = layer.bias.value
                conv_i += 1
        if self.classifier is not None:
            out["classifier.weight"] = self.classifier.weight.value
            out["classifier.bias"] = self.classifier.bias.value
        dense_i = 0
        for layer in self.backend:
            if isinstance(layer, Dense):
                out[f"backend{dense_i}.weight"] = layer.weight.value
                out[f"backend{dense_i}.bias"] = layer.bias.value
                dense_i += 1
        for phrase, rm in sorted(self.running_means.items()):
            out[f"running_mean.{phrase}"] = rm.mean
        return out

    def load_tensors(self, tensors):
        conv_i = 0
        for layer in self.front:
            if isinstance(layer, Conv1d):
                layer.weight.value = tensors[f"front{conv_i}.weight"].copy()
                layer.bias.value = tensors[f"front{conv_i}.bias"].copy()
                conv_i += 1
        if self.classifier is not None and "classifier.weight" in tensors:
            self.classifier.weight.value = tensors["classifier.weight"].copy()
            self.classifier.bias.value = tensors["classifier.bias"].copy()
        dense_i = 0
        for layer in self.backend:
            if isinstance(layer, Dense):
                # absent when initializing from a back-end-free checkpoint:
                # the freshly initialized back-end is kept in that case
                if f"backend{dense_i}.weight" in tensors:
                    layer.weight.value = tensors[f"backend{dense_i}.weight"].copy()
                    layer.bias.value = tensors[f"backend{dense_i}.bias"].copy()
                dense_i += 1
        for name, arr in tensors.items():
            if name.startswith("running_mean."):
                phrase = name[len("running_mean.") :]
                self.running_means[phrase] = RunningMean(arr.copy(), self.config.beta, 1)


# -------------------------------------------------------------- training


def _erase_batch(feats, p, rng):
    if p <= 0.0:
        return feats
    from .features import random_erasing

    return [random_erasing(f, p, rng) for f in feats]


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _check_labels(data, n_classes):
    for u in data:
        if not 0 <= u.label < n_classes:
            raise ValueError(f"label {u.label} of {u.uid} outside [0, {n_classes})")


def train_classifier(model: Model, data, holdout=None):
    """Cross-entropy speaker-classification training (types A, B, C).

    ``data`` is a list of :class:`UttData` with integer labels; the
    optional ``holdout`` list is only used to report a per-epoch CE.
    Deterministic given the config seed.  Returns a history dict.
    """
    cfg = model.config
    _check_labels(data, cfg.n_classes)
    if cfg.n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31]))
    erase_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 37]))
    opt = Adam(model.params(), lr=cfg.lr)
    history = {"train_ce": [], "holdout_ce": []}
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        for idx in _batches(len(data), cfg.batch_size, rng):
            batch = [data[i] for i in idx]
            feats = _erase_batch([u.feat for u in batch], cfg.erasing_p, erase_rng)
            aligns = None if cfg.pooling == "avg" else [u.align for u in batch]
            phrases = [u.phrase_id for u in batch]
            emb = model.embed_batch(feats, aligns, phrases, train=True)
            logits = model.classifier.forward(emb)
            probs = softmax(logits, axis=1)
            labels = np.array([u.label for u in batch])
            logp = np.log(probs[np.arange(len(batch)), labels])
            loss = -logp.mean()
            grad = probs
            grad[np.arange(len(batch)), labels] -= 1.0
            grad /= len(batch)
            opt.zero_grad()
            model.embed_backward(model.classifier.backward(grad))
            opt.step()
            epoch_loss += loss * len(batch)
        history["train_ce"].append(epoch_loss / len(data))
        if holdout:
            history["holdout_ce"].append(evaluate_ce(model, holdout))
    return history


def evaluate_ce(model: Model, data):
    cfg = model.config
    feats = [u.feat for u in data]
    aligns = None if cfg.pooling == "avg" else [u.align for u in data]
    emb = model.embed_batch(feats, aligns, [u.phrase_id for u in data], train=False)
    logits = model.classifier.forward(emb)
    probs = softmax(logits, axis=1)
    labels = np.array([u.label for u in data])
    return float(-np.log(probs[np.arange(len(data)), labels]).mean())


def classify_accuracy(model: Model, data):
    cfg = model.config
    feats = [u.feat for u in data]
    aligns = None if cfg.pooling == "avg" else [u.align for u in data]
    emb = model.embed_batch(feats, aligns, [u.phrase_id for u in data], train=False)
    logits = model.classifier.forward(emb)
    labels = np.array([u.label for u in data])
    return float((logits.argmax(axis=1) == labels).mean())


def train_bdk(teacher: Model, student: Model, data, erasing_p=0.3):
    """Teacher-student training with soft labels.

    The teacher sees Random-Erasing-augmented inputs and emits soft
    speaker posteriors; the student is trained with cross-entropy against
    those posteriors on the clean inputs.
    """
    if teacher.config.n_classes != student.config.n_classes:
        raise ValueError("teacher and student class counts differ")
    cfg = student.config
    # same batch-order stream as train_classifier: a one-hot teacher makes
    # the two trainers produce identical updates
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31]))
    erase_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 43]))
    opt = Adam(student.params(), lr=cfg.lr)
    history = {"train_ce": []}
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        for idx in _batches(len(data), cfg.batch_size, rng):
            batch = [data[i] for i in idx]
            aligns = None if cfg.pooling == "avg" else [u.align for u in batch]
            phrases = [u.phrase_id for u in batch]
            t_feats = _erase_batch([u.feat for u in batch], erasing_p, erase_rng)
            t_emb = teacher.embed_batch(t_feats, aligns, phrases, train=False)
            targets = softmax(teacher.classifier.forward(t_emb), axis=1)
            s_emb = student.embed_batch([u.feat for u in batch], aligns, phrases, train=True)
            logits = student.classifier.forward(s_emb)
            probs = softmax(logits, axis=1)
            loss = float(-(targets * np.log(np.maximum(probs, 1e-300))).sum(axis=1).mean())
            grad = (probs - targets) / len(batch)
            opt.zero_grad()
            student.embed_backward(student.classifier.backward(grad))
            opt.step()
            epoch_loss += loss * len(batch)
        history["train_ce"].append(epoch_loss / len(data))
    return history


def init_arch_d(config: ArchitectureConfig, pretrained_tensors, pretrained_config_text):
    """Build a type-D model initialized from a type-C checkpoint."""
    pre_cfg = ArchitectureConfig.from_text(pretrained_config_text)
    if pre_cfg.arch_type != "C":
        raise ValueError("end-to-end training requires a type-C pretrained checkpoint")
    model = Model(config)
    model.load_tensors(pretrained_tensors)  # front-end weights + running means
    return model


def train_end_to_end(model: Model, data, loss="aauc", max_pos=None, max_neg=None):
    """Joint front-end + back-end training on phrase-homogeneous batches.

    ``loss`` is either ``"aauc"`` (minimize 1 - aAUC over all batch
    pairs) or ``"triplet"`` (hard-mined triplets).  Per-batch scores come
    from cosine similarity on the back-end outputs.  Returns a history
    with the surrogate and exact batch AUC per step.
    """
    cfg = model.config
    if model.config.arch_type != "D":
        raise ValueError("end-to-end training is defined for architecture D")
    if loss not in ("aauc", "triplet"):
        raise ValueError(f"unknown end-to-end loss {loss!r}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 47]))
    opt = Adam(model.params(), lr=cfg.lr)
    by_phrase = {}
    for u in data:
        by_phrase.setdefault(u.phrase_id, []).append(u)
    history = {"loss": [], "exact_auc": [], "aauc": [], "first_grad_norm": None}
    for _ in range(cfg.epochs):
        tasks = []
        for phrase in sorted(by_phrase):
            utts = by_phrase[phrase]
            for idx in _batches(len(utts), cfg.batch_size, rng):
                tasks.append([utts[i] for i in idx])
        for batch in tasks:
            speakers = [u.speaker_id for u in batch]
            if len(set(speakers)) < 2:
                continue
            aligns = None if cfg.pooling == "avg" else [u.align for u in batch]
            emb = model.embed_batch([u.feat for u in batch], aligns, [u.phrase_id for u in batch], train=False)
            out = model.backend_forward(emb)
            grad_out = np.zeros_like(out)
            try:
                pair_batch = losses.build_pair_batch(
                    list(out), speakers, max_pos=max_pos, max_neg=max_neg
                )
            except ValueError:
                continue
            if loss == "aauc":
                aauc, gpos, gneg = losses.aauc_loss(
                    pair_batch.pos_scores, pair_batch.neg_scores, cfg.alpha
                )
                step_loss = 1.0 - aauc
                pair_grads = list(zip(pair_batch.pos_pairs, -gpos)) + list(
                    zip(pair_batch.neg_pairs, -gneg)
                )
                history["aauc"].append(aauc)
            else:
                triplets, _ = losses.mine_hard(list(out), speakers)
                if not triplets:
                    continue
                step_loss = 0.0
                pair_grads = []
                for tr in triplets:
                    s_ap = cosine_similarity(out[tr.anchor], out[tr.positive])
                    s_an = cosine_similarity(out[tr.anchor], out[tr.negative])
                    val, d_ap, d_an = losses.triplet_loss(s_ap, s_an, cfg.margin)
                    step_loss += val / len(triplets)
                    if d_ap:
                        pair_grads.append(((tr.anchor, tr.positive), d_ap / len(triplets)))
                    if d_an:
                        pair_grads.append(((tr.anchor, tr.negative), d_an / len(triplets)))
            for (i, j), g in pair_grads:
                ga, gb = cosine_similarity_backward(out[i], out[j], g)
                grad_out[i] += ga
                grad_out[j] += gb
            opt.zero_grad()
            model.embed_backward(model.backend_backward(grad_out))
            if history["first_grad_norm"] is None and model.front:
                history["first_grad_norm"] = float(
                    np.linalg.norm(model.front[0].weight.grad)
                )
            opt.step()
            history["loss"].append(float(step_loss))
            history["exact_auc"].append(
                losses.exact_auc(pair_batch.pos_scores, pair_batch.neg_scores)
            )
    return history


# -------------------------------------------------------------- scoring


def enroll(model: Model, utts):
    """Enrollment vector: mean of per-utterance embeddings, length-normalized."""
    if not utts:
        raise ValueError("enrollment needs at least one utterance")
    speakers = {u.speaker_id for u in utts}
    phrases = {u.phrase_id for u in utts}
    if len(phrases) != 1 or len(speakers) != 1:
        raise ValueError("enrollment utterances must share one speaker and one phrase")
    embs = np.stack([model.forward_embed(u) for u in utts])
    mean = embs.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValueError("degenerate zero enrollment embedding")
    return mean / norm


def score_trial(model: Model, enroll_vec, test_emb):
    """Cosine verification score; type D scores back-end outputs."""
    enroll_vec = np.asarray(enroll_vec, dtype=np.float64)
    test_emb = np.asarray(test_emb, dtype=np.float64)
    if enroll_vec.shape != test_emb.shape:
        raise ValueError("enrollment and test embedding dimensions differ")
    if model.config.arch_type == "D":
        a = model.backend_forward(enroll_vec)
        b = model.backend_forward(test_emb)
        return cosine_similarity(a, b)
    return cosine_similarity(enroll_vec, test_emb)
