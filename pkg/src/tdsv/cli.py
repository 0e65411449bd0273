"""Command-line entry point.

Subcommands: synth, features, train-aligner, train, embed, score, eval.
Every subcommand is deterministic given ``--seed`` and its inputs; the
fully resolved configuration is logged to stderr at the start of a run.
"""

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import corpus, features, fileio, network, pipeline
from .network import ArchitectureConfig, Model

CONFIG_KEYS = {f.name for f in fields(ArchitectureConfig)} | {
    "t_target",
    "enroll_sessions",
    "bdk",
}
DEFAULTS = {"t_target": 50, "enroll_sessions": 3, "bdk": False}


def _log(msg):
    print(msg, file=sys.stderr)


def _resolve_config(args):
    """File values first, then explicit flags on top of the defaults."""
    values = dict(DEFAULTS)
    cfg_defaults = ArchitectureConfig()
    for f in fields(ArchitectureConfig):
        values[f.name] = getattr(cfg_defaults, f.name)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            text = fh.read()
        parsed = fileio.parse_config_text(text, CONFIG_KEYS)
        for key, raw in parsed.items():
            values[key] = _cast_like(values[key], raw)
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _cast_like(values[key], flag) if isinstance(flag, str) else flag
    return values


def _cast_like(default, raw):
    if isinstance(default, bool):
        return str(raw).lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(x) for x in str(raw).split(",") if x)
    return raw


def _arch_config(values, n_classes=0):
    kwargs = {f.name: values[f.name] for f in fields(ArchitectureConfig)}
    kwargs["n_classes"] = n_classes
    return ArchitectureConfig(**kwargs)


def _log_config(values):
    for key in sorted(values):
        _log(f"config: {key} = {values[key]}")


# -------------------------------------------------------------- commands


def cmd_synth(args):
    spec = corpus.SyntheticSpec(
        n_speakers=args.speakers,
        n_phrases=args.phrases,
        n_sessions=args.sessions,
        q_true=args.segments,
        noise=args.noise,
        session_noise=args.session_noise,
        duration_jitter=args.jitter,
        seed=args.seed,
    )
    manifest = corpus.generate(spec, args.out)
    _log(f"wrote {len(manifest.records)} utterances under {args.out}")
    return 0


def cmd_features(args):
    from scipy.io import wavfile

    rate, samples = wavfile.read(args.wav)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim > 1:
        samples = samples.mean(axis=1)
    cfg = features.MfccConfig(sample_rate=rate)
    feat = features.extract_mfcc(samples, cfg)
    feat = features.add_deltas(feat)
    if args.cmn:
        feat = features.cepstral_mean_norm(feat)
    fileio.write_features(args.out, feat)
    _log(f"wrote {feat.shape[0]}x{feat.shape[1]} features to {args.out}")
    return 0


def cmd_train_aligner(args):
    values = _resolve_config(args)
    _log_config(values)
    manifest = corpus.ingest(args.manifest)
    aligners = pipeline.train_aligners(
        manifest,
        args.type,
        values["n_states"],
        values["t_target"],
        iterations=args.iterations,
        seed=values["seed"],
        tau=values["tau"],
        beta=values["beta"],
    )
    pipeline.save_aligners(args.out, aligners)
    _log(f"wrote {len(aligners)} {args.type} aligner models to {args.out}")
    return 0


def cmd_train(args):
    values = _resolve_config(args)
    _log_config(values)
    manifest = corpus.ingest(args.manifest)
    pooling = values["pooling"]
    aligners = pipeline.load_aligners(args.aligners) if pooling != "avg" else None
    data, speakers = pipeline.prepare_data(
        manifest, ["bkg", "dev"], pooling, aligners, values["t_target"]
    )

    if values["arch_type"] == "D":
        if not args.init:
            raise SystemExit("architecture D requires --init with a type-C checkpoint")
        pre_text, pre_tensors = fileio.read_checkpoint(args.init)
        cfg = _arch_config(values, n_classes=0)
        model = network.init_arch_d(cfg, pre_tensors, pre_text)
        if aligners:
            pipeline.seed_running_means(model, aligners)
        history = network.train_end_to_end(model, data, loss=values["loss"])
        _log(f"end-to-end steps: {len(history['loss'])}")
    else:
        cfg = _arch_config(values, n_classes=len(speakers))
        model = Model(cfg)
        if aligners:
            pipeline.seed_running_means(model, aligners)
        if values["bdk"]:
            teacher = model
            network.train_classifier(teacher, data)
            student = Model(cfg, rng=np.random.default_rng(
                np.random.SeedSequence([cfg.seed, 59])))
            if aligners:
                pipeline.seed_running_means(student, aligners)
            network.train_bdk(teacher, student, data,
                              erasing_p=max(values["erasing_p"], 0.3))
            model = student
        else:
            history = network.train_classifier(model, data)
            _log(f"final train CE: {history['train_ce'][-1]:.4f}")

    fileio.write_checkpoint(args.out, model.config.to_text(), model.tensors())
    _log(f"wrote checkpoint {args.out}")
    return 0


def _load_model(ckpt_path):
    config_text, tensors = fileio.read_checkpoint(ckpt_path)
    cfg = ArchitectureConfig.from_text(config_text)
    model = Model(cfg)
    model.load_tensors(tensors)
    return model


def cmd_embed(args):
    values = _resolve_config(args)
    model = _load_model(args.ckpt)
    manifest = corpus.ingest(args.manifest)
    aligners = None
    if model.config.pooling != "avg":
        aligners = pipeline.load_aligners(args.aligners)
    data, _ = pipeline.prepare_data(
        manifest, [args.partition], model.config.pooling, aligners, values["t_target"]
    )
    if aligners:
        pipeline.seed_running_means(model, aligners)
    embeddings = pipeline.embed_all(model, data)
    fileio.write_embeddings(args.out, sorted(embeddings.items()))
    _log(f"wrote {len(embeddings)} embeddings to {args.out}")
    return 0


def cmd_score(args):
    values = _resolve_config(args)
    model = _load_model(args.ckpt)
    manifest = corpus.ingest(args.manifest)
    embeddings = dict(fileio.read_embeddings(args.embeddings))
    trial_set = corpus.build_trials(manifest, args.partition, values["enroll_sessions"])
    score_rows, key_rows = [], []
    for m in trial_set.models:
        vecs = np.stack([embeddings[uid] for uid in m.utterance_ids])
        mean = vecs.mean(axis=0)
        enroll_vec = mean / np.linalg.norm(mean)
        for model_id, test_uid, is_target in trial_set.trials:
            if model_id != m.model_id:
                continue
            s = network.score_trial(model, enroll_vec, embeddings[test_uid])
            score_rows.append((model_id, test_uid, s))
            key_rows.append((model_id, test_uid, is_target))
    fileio.write_scores(args.out_scores, score_rows)
    fileio.write_key(args.out_key, key_rows)
    _log(f"wrote {len(score_rows)} trial scores")
    return 0


def cmd_eval(args):
    score_rows = fileio.read_scores(args.scores)
    key_rows = fileio.read_key(args.key)
    report = pipeline.evaluate_scores(
        score_rows, key_rows, p_target=args.p_target, c_miss=args.c_miss, c_fa=args.c_fa
    )
    lines = [
        f"EER% {100.0 * report['eer']:.4f}",
        f"DCF10 {report['min_dcf']:.4f}",
        f"AUC% {100.0 * report['auc']:.4f}",
        f"targets {report['n_target']}",
        f"nontargets {report['n_nontarget']}",
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        fileio.atomic_write_text(args.out, text)
    sys.stdout.write(text)
    if args.det:
        fileio.write_det(args.det, report["det"])
    return 0


# --------------------------------------------------------------- parser


def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    for name in (
        "arch_type", "pooling", "loss", "front_channels", "back_end",
        "n_states", "tau", "beta", "alpha", "margin", "lr", "epochs",
        "batch_size", "erasing_p", "t_target", "enroll_sessions",
    ):
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None)


def build_parser():
    p = argparse.ArgumentParser(prog="tdsv")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic corpus")
    ps.add_argument("--speakers", type=int, default=20)
    ps.add_argument("--phrases", type=int, default=5)
    ps.add_argument("--sessions", type=int, default=9)
    ps.add_argument("--segments", type=int, default=8)
    ps.add_argument("--noise", type=float, default=0.3)
    ps.add_argument("--session-noise", dest="session_noise", type=float, default=0.6)
    ps.add_argument("--jitter", type=int, default=5)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_synth)

    pf = sub.add_parser("features", help="extract MFCC features from a wav file")
    pf.add_argument("--wav", required=True)
    pf.add_argument("--out", required=True)
    pf.add_argument("--cmn", action="store_true", default=True)
    pf.add_argument("--no-cmn", dest="cmn", action="store_false")
    pf.set_defaults(func=cmd_features)

    pa = sub.add_parser("train-aligner", help="train per-phrase aligners on bkg")
    pa.add_argument("--manifest", required=True)
    pa.add_argument("--type", choices=("hmm", "gmm"), required=True)
    pa.add_argument("--iterations", type=int, default=10)
    pa.add_argument("--out", required=True)
    _add_config_flags(pa)
    pa.set_defaults(func=cmd_train_aligner)

    pt = sub.add_parser("train", help="train a model on bkg+dev")
    pt.add_argument("--manifest", required=True)
    pt.add_argument("--aligners")
    pt.add_argument("--init", help="type-C checkpoint to initialize architecture D")
    pt.add_argument("--bdk", action="store_true", default=None)
    pt.add_argument("--out", required=True)
    _add_config_flags(pt)
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("embed", help="extract embeddings for a partition")
    pe.add_argument("--ckpt", required=True)
    pe.add_argument("--manifest", required=True)
    pe.add_argument("--aligners")
    pe.add_argument("--partition", default="eval")
    pe.add_argument("--out", required=True)
    _add_config_flags(pe)
    pe.set_defaults(func=cmd_embed)

    pc = sub.add_parser("score", help="score Impostor-Correct trials")
    pc.add_argument("--ckpt", required=True)
    pc.add_argument("--manifest", required=True)
    pc.add_argument("--embeddings", required=True)
    pc.add_argument("--partition", default="eval")
    pc.add_argument("--out-scores", required=True)
    pc.add_argument("--out-key", required=True)
    _add_config_flags(pc)
    pc.set_defaults(func=cmd_score)

    pv = sub.add_parser("eval", help="metrics report + DET data from scores")
    pv.add_argument("--scores", required=True)
    pv.add_argument("--key", required=True)
    pv.add_argument("--out")
    pv.add_argument("--det")
    pv.add_argument("--p-target", dest="p_target", type=float, default=0.001)
    pv.add_argument("--c-miss", dest="c_miss", type=float, default=1.0)
    pv.add_argument("--c-fa", dest="c_fa", type=float, default=1.0)
    pv.set_defaults(func=cmd_eval)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
