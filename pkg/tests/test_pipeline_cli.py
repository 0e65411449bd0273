"""Pipeline plumbing and command-line interface tests.

Uses a miniature corpus so the full synth / align / train / embed /
score / eval chain runs in seconds.
"""

import numpy as np
import pytest

from tdsv import cli, corpus, fileio, pipeline
from tdsv.network import ArchitectureConfig, Model

SMALL = dict(n_speakers=6, n_phrases=2, n_sessions=4, q_true=3, dim=8,
             t_base=18, nuisance_dims=3, seed=0)
T_TARGET = 18


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest = corpus.generate(corpus.SyntheticSpec(**SMALL), out)
    return out, manifest


# ---------------------------------------------------------------- pipeline


@pytest.mark.parametrize("kind", ["hmm", "gmm"])
def test_train_aligners_covers_every_phrase(small_corpus, kind):
    _, manifest = small_corpus
    aligners = pipeline.train_aligners(manifest, kind, 3, T_TARGET, seed=0)
    assert sorted(aligners) == manifest.phrases()


def test_train_aligners_rejects_unknown_kind(small_corpus):
    _, manifest = small_corpus
    with pytest.raises(ValueError):
        pipeline.train_aligners(manifest, "dtw", 3, T_TARGET)


def test_aligner_save_load_round_trip(small_corpus, tmp_path):
    _, manifest = small_corpus
    for kind in ("hmm", "gmm"):
        aligners = pipeline.train_aligners(manifest, kind, 3, T_TARGET, seed=0)
        out = tmp_path / kind
        pipeline.save_aligners(out, aligners)
        got = pipeline.load_aligners(out)
        assert sorted(got) == sorted(aligners)
    with pytest.raises(ValueError):
        pipeline.load_aligners(tmp_path)  # directory without model files


def test_prepare_data_labels_index_sorted_speakers(small_corpus):
    _, manifest = small_corpus
    aligners = pipeline.train_aligners(manifest, "hmm", 3, T_TARGET, seed=0)
    data, speakers = pipeline.prepare_data(
        manifest, ["bkg", "dev"], "hmm", aligners, T_TARGET
    )
    assert speakers == sorted(speakers)
    for u in data:
        assert speakers[u.label] == u.speaker_id
        assert u.feat.shape == (SMALL["dim"], T_TARGET)
        assert u.align.shape == (T_TARGET, 3)


def test_prepare_data_requires_aligners_for_alignment_pooling(small_corpus):
    _, manifest = small_corpus
    with pytest.raises(ValueError):
        pipeline.prepare_data(manifest, ["bkg"], "hmm", None, T_TARGET)


def test_run_verification_report_is_complete(small_corpus):
    _, manifest = small_corpus
    cfg = ArchitectureConfig(arch_type="B", pooling="hmm", input_dim=SMALL["dim"],
                             n_states=3, n_classes=2)
    model = Model(cfg)
    aligners = pipeline.train_aligners(manifest, "hmm", 3, T_TARGET, seed=0)
    report, scores, keys = pipeline.run_verification(
        model, manifest, aligners, T_TARGET, enroll_sessions=2
    )
    assert 0.0 <= report["eer"] <= 0.5
    assert 0.0 <= report["min_dcf"] <= 1.0 + 1e-9
    assert 0.0 <= report["auc"] <= 1.0
    assert report["n_target"] > 0 and report["n_nontarget"] > 0
    assert len(scores) == len(keys) == report["n_target"] + report["n_nontarget"]


def test_evaluate_scores_rejects_unmatched_trials():
    with pytest.raises(ValueError):
        pipeline.evaluate_scores([("m", "t", 0.5)], [("m", "other", True)])


# --------------------------------------------------------------------- cli


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def full_cli_run(root, tag, seed=0):
    """synth -> align -> train -> embed -> score -> eval, returning paths."""
    d = root / tag
    code = run_cli(
        "synth", "--speakers", 6, "--phrases", 2, "--sessions", 4,
        "--segments", 3, "--seed", seed, "--out", d / "corpus",
    )
    assert code == 0
    manifest = d / "corpus" / "manifest.txt"
    assert run_cli(
        "train-aligner", "--manifest", manifest, "--type", "hmm",
        "--n-states", 3, "--t-target", T_TARGET, "--out", d / "aligners",
    ) == 0
    assert run_cli(
        "train", "--manifest", manifest, "--aligners", d / "aligners",
        "--arch-type", "C", "--pooling", "hmm", "--n-states", 3,
        "--front-channels", "6,6", "--epochs", 3, "--t-target", T_TARGET,
        "--seed", seed, "--out", d / "model.svck",
    ) == 0
    assert run_cli(
        "embed", "--ckpt", d / "model.svck", "--manifest", manifest,
        "--aligners", d / "aligners", "--partition", "eval",
        "--t-target", T_TARGET, "--out", d / "eval.svem",
    ) == 0
    assert run_cli(
        "score", "--ckpt", d / "model.svck", "--manifest", manifest,
        "--embeddings", d / "eval.svem", "--enroll-sessions", 2,
        "--out-scores", d / "scores.txt", "--out-key", d / "key.txt",
    ) == 0
    assert run_cli(
        "eval", "--scores", d / "scores.txt", "--key", d / "key.txt",
        "--out", d / "report.txt", "--det", d / "det.txt",
    ) == 0
    return d


def test_cli_full_chain_produces_report(tmp_path, capsys):
    d = full_cli_run(tmp_path, "run")
    report = (d / "report.txt").read_text()
    assert report.startswith("EER% ")
    assert "DCF10 " in report and "AUC% " in report
    det = (d / "det.txt").read_text().splitlines()
    assert det[0].startswith("#") and len(det) > 2
    out = capsys.readouterr().out
    assert "EER%" in out  # report echoed to stdout


def test_cli_same_seed_is_byte_identical(tmp_path):
    d1 = full_cli_run(tmp_path, "a", seed=3)
    d2 = full_cli_run(tmp_path, "b", seed=3)
    for name in ("model.svck", "eval.svem", "scores.txt", "key.txt", "report.txt"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_cli_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs = 2\nlr = 0.01  # comment\n")
    args = cli.build_parser().parse_args(
        ["train", "--manifest", "m", "--out", "o", "--config", str(cfg),
         "--lr", "0.5"]
    )
    values = cli._resolve_config(args)
    assert values["epochs"] == 2  # from the file
    assert values["lr"] == 0.5  # flag wins over the file
    assert values["batch_size"] == 32  # untouched default


def test_cli_rejects_unknown_config_keys(tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("learning_rate = 0.5\n")
    args = cli.build_parser().parse_args(
        ["train", "--manifest", "m", "--out", "o", "--config", str(cfg)]
    )
    with pytest.raises(ValueError):
        cli._resolve_config(args)


def test_cli_errors_exit_nonzero(tmp_path):
    assert run_cli("eval", "--scores", tmp_path / "none.txt",
                   "--key", tmp_path / "none.txt") == 1
    assert run_cli("train-aligner", "--manifest", tmp_path / "none.txt",
                   "--type", "hmm", "--out", tmp_path / "x") == 1


def test_cli_arch_d_requires_init(tmp_path):
    d = full_cli_run(tmp_path, "base")
    manifest = d / "corpus" / "manifest.txt"
    with pytest.raises(SystemExit):
        run_cli(
            "train", "--manifest", manifest, "--aligners", d / "aligners",
            "--arch-type", "D", "--pooling", "hmm", "--n-states", 3,
            "--t-target", T_TARGET, "--out", d / "d.svck",
        )
    assert run_cli(
        "train", "--manifest", manifest, "--aligners", d / "aligners",
        "--arch-type", "D", "--pooling", "hmm", "--n-states", 3,
        "--front-channels", "6,6", "--back-end", "8,4", "--loss", "aauc",
        "--epochs", 2, "--t-target", T_TARGET, "--init", d / "model.svck",
        "--out", d / "d.svck",
    ) == 0
    text, _ = fileio.read_checkpoint(d / "d.svck")
    assert ArchitectureConfig.from_text(text).arch_type == "D"


def test_cli_bdk_training_runs(tmp_path):
    d = full_cli_run(tmp_path, "base")
    manifest = d / "corpus" / "manifest.txt"
    assert run_cli(
        "train", "--manifest", manifest, "--aligners", d / "aligners",
        "--arch-type", "C", "--pooling", "hmm", "--n-states", 3,
        "--front-channels", "6,6", "--epochs", 2, "--t-target", T_TARGET,
        "--bdk", "--out", d / "bdk.svck",
    ) == 0
    assert (d / "bdk.svck").exists()
