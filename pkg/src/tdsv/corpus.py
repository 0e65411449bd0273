"""Synthetic speaker-by-phrase corpus with planted segment structure.

Each phrase is a sequence of segment centroids traversed left to right
with random per-segment dwell; speakers are realized as a per-speaker
spectral coloring plus an additive offset, sessions add channel-like
offsets on a fixed nuisance subspace, and frame noise is added on top.
Ground-truth segment boundaries are written to a sidecar so aligner
tests can check recovered segmentations.

Also provides manifest ingestion and Impostor-Correct trial-list
construction (nontarget speakers utter the same phrase as the target).
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import fileio

__all__ = [
    "SyntheticSpec",
    "UttRecord",
    "CorpusManifest",
    "EnrollModel",
    "TrialSet",
    "generate",
    "ingest",
    "write_manifest",
    "build_trials",
]

PARTITIONS = ("bkg", "dev", "eval")


@dataclass
class SyntheticSpec:
    n_speakers: int = 20
    n_phrases: int = 5
    n_sessions: int = 9
    q_true: int = 8
    dim: int = 60
    t_base: int = 50
    duration_jitter: int = 5
    noise: float = 0.3
    session_noise: float = 0.6
    nuisance_dims: int = 20
    centroid_scale: float = 1.0
    offset_scale: float = 0.1
    coloring_scale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError("need at least 2 speakers")
        if self.q_true < 2:
            raise ValueError("need at least 2 segments per phrase")
        if self.noise < 0:
            raise ValueError("noise level must be nonnegative")


@dataclass
class UttRecord:
    utterance_id: str
    speaker_id: str
    phrase_id: str
    session: int
    partition: str
    path: str


@dataclass
class CorpusManifest:
    records: list

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen = set()
        speaker_partition = {}
        problems = []
        for r in self.records:
            if r.utterance_id in seen:
                problems.append(f"duplicate utterance_id {r.utterance_id}")
            seen.add(r.utterance_id)
            if r.partition not in PARTITIONS:
                problems.append(f"unknown partition {r.partition!r}")
            prev = speaker_partition.setdefault(r.speaker_id, r.partition)
            if prev != r.partition:
                problems.append(
                    f"speaker {r.speaker_id} appears in partitions {prev} and {r.partition}"
                )
            if not os.path.exists(r.path):
                problems.append(f"missing feature file {r.path}")
        if problems:
            raise ValueError("invalid manifest: " + "; ".join(problems))

    def subset(self, partition=None, phrase=None):
        out = self.records
        if partition is not None:
            out = [r for r in out if r.partition == partition]
        if phrase is not None:
            out = [r for r in out if r.phrase_id == phrase]
        return out

    def phrases(self):
        return sorted({r.phrase_id for r in self.records})

    def speakers(self, partition=None):
        return sorted({r.speaker_id for r in self.subset(partition)})


def _partition_of(speaker_index, n_speakers):
    """Speaker-disjoint 40/20/40 split into bkg/dev/eval."""
    n_bkg = max(2, int(round(0.4 * n_speakers)))
    n_dev = max(1, int(round(0.2 * n_speakers)))
    if speaker_index < n_bkg:
        return "bkg"
    if speaker_index < n_bkg + n_dev:
        return "dev"
    return "eval"


def _utt_rng(seed, utt_index):
    return np.random.default_rng(np.random.SeedSequence([seed, 7919, utt_index]))


def generate(spec: SyntheticSpec, out_dir):
    """Write feature files, boundary sidecar and manifest; return manifest.

    Fully deterministic given the spec seed; per-utterance streams are
    derived from (seed, utterance index) so generation order does not
    matter.
    """
    feat_dir = os.path.join(out_dir, "feats")
    os.makedirs(feat_dir, exist_ok=True)

    d = spec.dim
    nuis = np.zeros(d)
    if spec.nuisance_dims > 0:
        nuis[d - spec.nuisance_dims :] = 1.0
    speaker_mask = 1.0 - nuis

    templates = {}
    for p in range(spec.n_phrases):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 11, p]))
        tpl = rng.normal(0.0, spec.centroid_scale, (spec.q_true, d))
        # zero mean over segments, like cepstral trajectories: the phrase
        # structure lives in the deviations, not in a per-dim offset
        templates[p] = tpl - tpl.mean(axis=0, keepdims=True)

    colorings, offsets = {}, {}
    for s in range(spec.n_speakers):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 13, s]))
        colorings[s] = np.exp(spec.coloring_scale * rng.normal(size=d) * speaker_mask)
        offsets[s] = spec.offset_scale * rng.normal(size=d) * speaker_mask

    session_vecs = {}
    for s in range(spec.n_speakers):
        for k in range(spec.n_sessions):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 17, s, k]))
            session_vecs[(s, k)] = spec.session_noise * rng.normal(size=d) * nuis

    records = []
    boundary_lines = []
    utt_index = 0
    base_dwell = max(1, spec.t_base // spec.q_true)
    for s in range(spec.n_speakers):
        part = _partition_of(s, spec.n_speakers)
        for p in range(spec.n_phrases):
            for k in range(spec.n_sessions):
                rng = _utt_rng(spec.seed, utt_index)
                utt_index += 1
                jit = spec.duration_jitter
                dwell = base_dwell + (
                    rng.integers(-jit, jit + 1, spec.q_true) if jit > 0 else 0
                )
                dwell = np.maximum(np.asarray(dwell).reshape(spec.q_true), 1)
                bounds = np.cumsum(dwell)[:-1]
                t_total = int(dwell.sum())
                seg_of_frame = np.repeat(np.arange(spec.q_true), dwell)
                clean = templates[p][seg_of_frame].T  # (D, T)
                feat = (
                    colorings[s][:, None] * clean
                    + offsets[s][:, None]
                    + session_vecs[(s, k)][:, None]
                    + spec.noise * rng.normal(size=(d, t_total))
                )
                uid = f"spk{s:03d}-phr{p:02d}-ses{k:02d}"
                path = os.path.join(feat_dir, uid + ".svfm")
                fileio.write_features(path, feat)
                records.append(
                    UttRecord(uid, f"spk{s:03d}", f"phr{p:02d}", k, part, path)
                )
                boundary_lines.append(uid + " " + " ".join(str(b) for b in bounds))

    fileio.atomic_write_text(
        os.path.join(out_dir, "boundaries.txt"), "\n".join(boundary_lines) + "\n"
    )
    manifest = CorpusManifest(records)
    write_manifest(os.path.join(out_dir, "manifest.txt"), manifest)
    return manifest


def write_manifest(path, manifest: CorpusManifest):
    lines = [
        f"{r.utterance_id} {r.speaker_id} {r.phrase_id} {r.session} {r.partition} {r.path}"
        for r in manifest.records
    ]
    fileio.atomic_write_text(path, "\n".join(lines) + "\n")


def ingest(path):
    """Read and validate a text manifest (one record per line)."""
    records = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"manifest line {lineno}: expected 6 fields: {raw!r}")
            uid, spk, phr, session, part, fpath = parts
            records.append(UttRecord(uid, spk, phr, int(session), part, fpath))
    return CorpusManifest(records)


def read_boundaries(path):
    bounds = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            bounds[parts[0]] = np.array([int(x) for x in parts[1:]])
    return bounds


@dataclass
class EnrollModel:
    model_id: str
    speaker_id: str
    phrase_id: str
    utterance_ids: list


@dataclass
class TrialSet:
    models: list
    trials: list  # (model_id, test_utterance_id, is_target)
    skipped_speakers: int = 0


def build_trials(manifest: CorpusManifest, partition="eval", enroll_sessions=3):
    """Impostor-Correct trials on one partition.

    Enrollment uses the first ``enroll_sessions`` sessions per (speaker,
    phrase); every remaining utterance of the same phrase becomes a test
    trial against every model of that phrase (target when the speaker
    matches).  Enrollment and test utterances never overlap.
    """
    recs = manifest.subset(partition)
    if not recs:
        raise ValueError(f"partition {partition!r} is empty")
    models = []
    tests = []
    skipped = 0
    by_speaker_phrase = {}
    for r in recs:
        by_speaker_phrase.setdefault((r.speaker_id, r.phrase_id), []).append(r)
    for (spk, phr), rs in sorted(by_speaker_phrase.items()):
        rs = sorted(rs, key=lambda r: r.session)
        enroll = [r for r in rs if r.session < enroll_sessions]
        test = [r for r in rs if r.session >= enroll_sessions]
        if not test:
            skipped += 1
        if enroll:
            models.append(
                EnrollModel(f"{spk}-{phr}", spk, phr, [r.utterance_id for r in enroll])
            )
        tests.extend(test)
    trials = []
    for m in models:
        for r in tests:
            if r.phrase_id != m.phrase_id:
                continue
            trials.append((m.model_id, r.utterance_id, r.speaker_id == m.speaker_id))
    return TrialSet(models, trials, skipped)
