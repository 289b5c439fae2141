import re

import numpy as np
import pytest

from cpcx import cli, gradsuite
from cpcx.data import load_checkpoint, load_utterances, read_features, read_manifest, write_symbols

TINY = ["--channels", "8", "--hidden", "8", "--predictor", "linear", "--K", "2", "--window", "2560",
        "--batch-size", "2", "--negatives", "4"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert cli.main(["synth-data", "--out", str(root / "raw"), "--speakers", "4", "--utterances", "3",
                     "--seconds", "1.5", "--seed", "1"]) == 0
    assert cli.main(["make-splits", "--data", str(root / "raw"), "--out", str(root / "splits"), "--ratios", "2,1,1"]) == 0
    ckpt = root / "tiny.ckpt"
    assert cli.main(["pretrain", "--data", str(root / "splits"), "--out", str(ckpt), "--steps", "3", *TINY]) == 0
    return root


def test_every_flag_documents_its_default(capsys):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.option_strings[0] in text, (name, action.option_strings)
                assert action.help and ("default:" in action.help or "(required)" in action.help), (name, action.dest)


def test_help_defaults_match_module_defaults():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    pre = sub.choices["pretrain"].format_help()
    for flag, value in (("--lr", "0.0002"), ("--K", "12"), ("--steps", "2000"), ("--negatives", "128"),
                        ("--window", "20480"), ("--predictor", "transformer"), ("--recurrence", "lstm")):
        assert re.search(re.escape(flag) + r".*?\(default: " + re.escape(value) + ";", pre, re.S), flag
    prb = sub.choices["probe"].format_help()
    assert re.search(r"--stack.*?\(default: 8;", prb, re.S)
    assert re.search(r"--mode.*?\(default: frozen;", prb, re.S)


def test_usage_errors_exit_one(capsys, tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main(["pretrain", "--bogus"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["pretrain", "--data", "x", "--out", "y", "--predictor", "rnn"])
    assert e.value.code == 1
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntrain.lr = 0.1\nnot.a.key = 3\n")
    code, _, err = run(capsys, "pretrain", "--data", tmp_path, "--out", tmp_path / "o", "--config", cfg)
    assert code == 1 and "not.a.key" in err
    code, _, err = run(capsys, "pretrain", "--data", tmp_path, "--out", tmp_path / "o", "--steps", "many")
    assert code == 1 and "train.max_steps" in err


def test_data_errors_exit_two(capsys, tmp_path):
    code, _, err = run(capsys, "pretrain", "--data", tmp_path / "nowhere", "--out", tmp_path / "o")
    assert code == 2 and "cpcx pretrain" in err
    code, _, err = run(capsys, "eval-abx", "--ckpt", tmp_path / "missing.ckpt", "--data", tmp_path)
    assert code == 2


def test_numerical_failures_exit_three(capsys, monkeypatch):
    monkeypatch.setattr(gradsuite, "run_suite", lambda seed=0: [gradsuite.CheckResult("broken", 1.0, 1e-6, 0.0)])
    code, out, _ = run(capsys, "grad-check")
    assert code == 3 and out.startswith("FAIL\tbroken")


def test_grad_check_passes_on_clean_build(capsys):
    code, out, _ = run(capsys, "grad-check")
    assert code == 0
    assert "FAIL" not in out and out.strip().endswith("checks passed")


def test_precedence_flag_over_file_over_default(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("train.lr = 0.01\ntrain.batch_size = 3\nthreads = 2\n")
    parser = cli.build_parser()
    monkeypatch.delenv(cli.THREADS_ENV, raising=False)
    v = cli.resolve(parser.parse_args(["pretrain", "--data", "d", "--out", "o", "--config", str(cfg), "--lr", "0.5"]))
    assert v["train.lr"] == 0.5 and v["train.batch_size"] == 3 and v["train.n_negatives"] == 128
    assert v["threads"] == 2
    monkeypatch.setenv(cli.THREADS_ENV, "4")
    v = cli.resolve(parser.parse_args(["pretrain", "--data", "d", "--out", "o", "--config", str(cfg)]))
    assert v["threads"] == 4
    v = cli.resolve(parser.parse_args(["pretrain", "--data", "d", "--out", "o", "--threads", "1"]))
    assert v["threads"] == 1


def test_resolved_config_is_logged(corpus, capsys, tmp_path):
    code, _, err = run(capsys, "pretrain", "--data", corpus / "splits", "--out", tmp_path / "z.ckpt", "--steps", "0", *TINY)
    assert code == 0
    assert "train.max_steps = 0" in err and "predictor.kind = linear" in err


def test_splits_written(corpus):
    speakers = [{r.speaker for r in read_manifest(corpus / "splits" / f"{n}.tsv")} for n in ("train", "dev", "test")]
    assert [len(s) for s in speakers] == [2, 1, 1]
    assert not (speakers[0] & speakers[1] or speakers[0] & speakers[2] or speakers[1] & speakers[2])
    assert (corpus / "splits" / "inventory.txt").is_file()


def test_zero_steps_writes_initial_checkpoint(corpus, capsys, tmp_path):
    code, out, _ = run(capsys, "pretrain", "--data", corpus / "splits", "--out", tmp_path / "init.ckpt", "--steps", "0", *TINY)
    assert code == 0 and "initialisation only" in out
    ckpt = load_checkpoint(tmp_path / "init.ckpt")
    assert ckpt.config["state.step"] == "0"
    assert "encoder.conv0.weight" in ckpt.arrays


def test_same_command_same_checkpoint(corpus, capsys, tmp_path):
    for name in ("a", "b"):
        assert run(capsys, "pretrain", "--data", corpus / "splits", "--out", tmp_path / f"{name}.ckpt", "--steps", "2", *TINY)[0] == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt.trace.tsv").read_bytes() == (tmp_path / "b.ckpt.trace.tsv").read_bytes()


def test_resume_through_cli(corpus, capsys, tmp_path):
    split = corpus / "splits"
    run(capsys, "pretrain", "--data", split, "--out", tmp_path / "full.ckpt", "--steps", "4", *TINY)
    run(capsys, "pretrain", "--data", split, "--out", tmp_path / "half.ckpt", "--steps", "2", *TINY)
    run(capsys, "pretrain", "--data", split, "--out", tmp_path / "rest.ckpt", "--steps", "4", "--resume", tmp_path / "half.ckpt", *TINY)
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "rest.ckpt").read_bytes()


def test_supervised_without_alignments_is_usage_error(corpus, capsys, tmp_path):
    rows = (corpus / "splits" / "train.tsv").read_text().splitlines()
    stripped = [rows[0]] + ["\t".join(r.split("\t")[:4] + [""]) for r in rows[1:]]
    (corpus / "splits" / "noali.tsv").write_text("\n".join(stripped) + "\n")
    code, _, err = run(capsys, "pretrain", "--data", corpus / "splits" / "noali.tsv", "--out", tmp_path / "s.ckpt",
                       "--mode", "supervised", "--steps", "1", *TINY)
    assert code == 1 and "alignments" in err


def test_supervised_mode_runs(corpus, capsys, tmp_path):
    code, _, _ = run(capsys, "pretrain", "--data", corpus / "splits", "--out", tmp_path / "s.ckpt", "--mode", "supervised", "--steps", "2", *TINY)
    assert code == 0
    assert load_checkpoint(tmp_path / "s.ckpt").config["meta.inventory"].startswith("p0,")


def test_frozen_probe_prints_table_and_leaves_checkpoint(corpus, capsys, tmp_path):
    ckpt = corpus / "tiny.ckpt"
    before = ckpt.read_bytes()
    code, out, _ = run(capsys, "probe", "--ckpt", ckpt, "--data", corpus / "splits", "--stride", "4", "--steps", "2",
                       "--out", tmp_path / "per.tsv")
    assert code == 0
    assert ckpt.read_bytes() == before
    rows = [line.split("\t") for line in out.strip().splitlines()]
    assert [r[0] for r in rows] == ["dev", "test"]
    assert all(re.fullmatch(r"\d+\.\d{4}", r[1]) for r in rows)
    assert (tmp_path / "per.tsv").read_text() == out


def test_probe_both_modes(corpus, capsys):
    code, out, _ = run(capsys, "probe", "--ckpt", corpus / "tiny.ckpt", "--data", corpus / "splits", "--stride", "4",
                       "--steps", "2", "--mode", "both")
    assert code == 0
    assert [line.split("\t")[0] for line in out.strip().splitlines()] == ["frozen.dev", "frozen.test", "finetune.dev", "finetune.test"]


def test_probe_inventory_mismatch(corpus, capsys, tmp_path):
    sup = tmp_path / "sup.ckpt"
    run(capsys, "pretrain", "--data", corpus / "splits", "--out", sup, "--mode", "supervised", "--steps", "1", *TINY)
    inv = tmp_path / "other_inventory.txt"
    write_symbols(inv, ["p7", "p6", "p5", "p4", "p3", "p2", "p1", "p0"])
    code, _, err = run(capsys, "probe", "--ckpt", sup, "--data", corpus / "splits", "--inventory", inv, "--stride", "4", "--steps", "1")
    assert code == 2 and "inventory" in err


def test_eval_abx_both(corpus, capsys, tmp_path):
    code, out, _ = run(capsys, "eval-abx", "--ckpt", corpus / "tiny.ckpt", "--data", corpus / "raw", "--max-triplets", "50",
                       "--out", tmp_path / "abx.txt")
    assert code == 0
    rows = [line.split("\t") for line in out.strip().splitlines()]
    assert [r[0] for r in rows] == ["within", "across"]
    assert all(0 <= float(r[1]) <= 100 for r in rows)
    assert "within.score = " in (tmp_path / "abx.txt").read_text()


def test_extract_one_file_per_utterance(corpus, capsys, tmp_path):
    code, _, _ = run(capsys, "extract", "--ckpt", corpus / "tiny.ckpt", "--data", corpus / "raw", "--out", tmp_path / "feats")
    assert code == 0
    records = read_manifest(corpus / "raw" / "manifest.tsv")
    files = sorted(p.name for p in (tmp_path / "feats").iterdir())
    assert files == sorted(f"{r.utt_id}.cpcf" for r in records)
    for u in load_utterances(corpus / "raw" / "manifest.tsv"):
        frames = read_features(tmp_path / "feats" / f"{u.utt_id}.cpcf")
        assert frames.shape == (u.n_frames, 8)
        assert np.all(np.isfinite(frames))
