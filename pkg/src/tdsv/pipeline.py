"""Experiment plumbing shared by the CLI and the test suite.

Ties the corpus, aligners, network and metrics together: aligner
training on the background partition, per-utterance alignment
computation, embedding extraction, trial scoring and report generation.
"""

import os

import numpy as np

from . import fileio, hmm as hmm_mod, gmm as gmm_mod, metrics, network
from .corpus import CorpusManifest, TrialSet, build_trials
from .features import interpolate_time
from .gmm import RunningMean

__all__ = [
    "load_features",
    "train_aligners",
    "load_aligners",
    "prepare_data",
    "embed_all",
    "score_trial_set",
    "evaluate_scores",
]


def load_features(record, t_target):
    feat = fileio.read_features(record.path)
    return interpolate_time(feat, t_target)


def train_aligners(manifest: CorpusManifest, kind, n_states, t_target,
                   iterations=10, seed=0, tau=10.0, beta=0.01):
    """One aligner per phrase, trained on the bkg partition.

    Returns {phrase_id: PhraseHMM} or {phrase_id: (PhraseGMM,
    RunningMean, tau)}; the GMM running mean starts at the GMM means.
    """
    bkg = manifest.subset("bkg")
    if not bkg:
        raise ValueError("manifest has no bkg partition to train aligners on")
    aligners = {}
    for phrase in manifest.phrases():
        utts = [load_features(r, t_target) for r in bkg if r.phrase_id == phrase]
        if not utts:
            raise ValueError(f"no bkg utterances for phrase {phrase!r}")
        if kind == "hmm":
            aligners[phrase] = hmm_mod.hmm_train(
                utts, n_states, iterations=iterations, phrase_id=phrase
            )
        elif kind == "gmm":
            g = gmm_mod.gmm_train(
                utts, n_states, iterations=iterations, seed=seed, phrase_id=phrase
            )
            aligners[phrase] = (g, RunningMean(g.means.T.copy(), beta), tau)
        else:
            raise ValueError(f"unknown aligner kind {kind!r}")
    return aligners


def save_aligners(out_dir, aligners):
    os.makedirs(out_dir, exist_ok=True)
    for phrase, al in sorted(aligners.items()):
        if isinstance(al, hmm_mod.PhraseHMM):
            fileio.write_hmm(os.path.join(out_dir, f"{phrase}.svhm"), al)
        else:
            g, rm, tau = al
            fileio.write_gmm(os.path.join(out_dir, f"{phrase}.svgm"), g, rm, tau)


def load_aligners(path):
    aligners = {}
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if name.endswith(".svhm"):
            h = fileio.read_hmm(full)
            aligners[h.phrase_id] = h
        elif name.endswith(".svgm"):
            g, rm, tau = fileio.read_gmm(full)
            aligners[g.phrase_id] = (g, rm, tau)
    if not aligners:
        raise ValueError(f"no aligner model files found in {path}")
    return aligners


def alignment_for(feat, aligner):
    """Hard or soft alignment matrix of one utterance's raw features."""
    if isinstance(aligner, hmm_mod.PhraseHMM):
        path = hmm_mod.viterbi_decode(aligner, feat)
        return hmm_mod.build_alignment_matrix(path, aligner.n_states)
    g = aligner[0]
    return gmm_mod.gmm_posteriors(g, feat)


def prepare_data(manifest: CorpusManifest, partitions, pooling, aligners, t_target):
    """Load features and alignments into UttData; labels index the sorted
    speakers of the selected partitions."""
    recs = []
    for part in partitions:
        recs.extend(manifest.subset(part))
    recs.sort(key=lambda r: r.utterance_id)
    speakers = sorted({r.speaker_id for r in recs})
    label_of = {s: i for i, s in enumerate(speakers)}
    data = []
    for r in recs:
        feat = load_features(r, t_target)
        align = None
        if pooling != "avg":
            if aligners is None or r.phrase_id not in aligners:
                raise ValueError(f"no aligner for phrase {r.phrase_id!r}")
            align = alignment_for(feat, aligners[r.phrase_id])
        data.append(
            network.UttData(r.utterance_id, r.speaker_id, r.phrase_id, feat, align,
                            label_of[r.speaker_id])
        )
    return data, speakers


def seed_running_means(model: network.Model, aligners):
    """For models pooling raw features (no front-end), adopt the GMM
    means as the pooling prior."""
    if model.config.pooling != "gmm_map" or model.front:
        return
    for phrase, al in aligners.items():
        if phrase not in model.running_means:
            g, rm, _ = al
            model.running_means[phrase] = rm.copy()


def embed_all(model: network.Model, data):
    """Deterministic eval-mode embeddings, {utterance_id: vector}."""
    return {u.uid: model.forward_embed(u, train=False) for u in data}


def score_trial_set(model: network.Model, trial_set: TrialSet, embeddings, data_by_uid):
    """Score every trial; returns (score_rows, key_rows)."""
    enroll_vecs = {}
    for m in trial_set.models:
        utts = [data_by_uid[uid] for uid in m.utterance_ids]
        enroll_vecs[m.model_id] = network.enroll(model, utts)
    score_rows, key_rows = [], []
    for model_id, test_uid, is_target in trial_set.trials:
        s = network.score_trial(model, enroll_vecs[model_id], embeddings[test_uid])
        score_rows.append((model_id, test_uid, s))
        key_rows.append((model_id, test_uid, is_target))
    return score_rows, key_rows


def evaluate_scores(score_rows, key_rows, p_target=0.001, c_miss=1.0, c_fa=1.0):
    """EER / minDCF / AUC plus the DET curve for matched score+key rows."""
    labels = {(e, t): tgt for e, t, tgt in key_rows}
    tar, non = [], []
    for e, t, s in score_rows:
        if (e, t) not in labels:
            raise ValueError(f"trial ({e}, {t}) missing from key")
        (tar if labels[(e, t)] else non).append(s)
    tar = np.array(tar)
    non = np.array(non)
    return {
        "eer": metrics.compute_eer(tar, non),
        "min_dcf": metrics.compute_min_dcf(tar, non, p_target, c_miss, c_fa),
        "auc": metrics.compute_auc(tar, non),
        "det": metrics.det_points(tar, non),
        "n_target": int(tar.size),
        "n_nontarget": int(non.size),
    }


def run_verification(model, manifest, aligners, t_target, enroll_sessions=3,
                     partition="eval"):
    """Embed, score and evaluate the Impostor-Correct trials of a partition."""
    data, _ = prepare_data(manifest, [partition], model.config.pooling, aligners, t_target)
    if aligners:
        seed_running_means(model, aligners)
    by_uid = {u.uid: u for u in data}
    trial_set = build_trials(manifest, partition, enroll_sessions)
    embeddings = embed_all(model, data)
    score_rows, key_rows = score_trial_set(model, trial_set, embeddings, by_uid)
    report = evaluate_scores(score_rows, key_rows)
    return report, score_rows, key_rows
