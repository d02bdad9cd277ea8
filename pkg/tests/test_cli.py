import shutil

import numpy as np
import pytest

from fsasd import datasets as ds
from fsasd.cli import main
from fsasd.scoring import Threshold

TINY = ["--set", "machines=fan,valve", "--set", "train_source=6", "--set", "train_target=2",
        "--set", "test_normal=5", "--set", "test_anomaly=3"]
FAST = ["--set", "n_mels=16", "--set", "encoder=16", "--set", "bottleneck=4", "--epochs", "2"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "corpus"
    assert main(["synth", "--seed", "3", "--out", str(root), *TINY]) == 0
    return root


def run(*args):
    return main(list(map(str, args)))


def test_synth_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--preset", "mini"])
    assert exc.value.code == 2
    assert "--out" in capsys.readouterr().err


def test_bad_config_key_exits_2(corpus, tmp_path, capsys):
    assert run("train", "--corpus", corpus, "--out", tmp_path, "--set", "wobble=1") == 2
    assert "wobble" in capsys.readouterr().err


def test_synth_prints_counts_and_is_repeatable(corpus, tmp_path, capsys):
    assert run("synth", "--seed", 3, "--out", tmp_path / "again", *TINY) == 0
    out = capsys.readouterr().out
    assert "fan" in out and "valve" in out
    a = sorted(p.relative_to(corpus) for p in corpus.rglob("*.wav"))
    b = sorted(p.relative_to(tmp_path / "again") for p in (tmp_path / "again").rglob("*.wav"))
    assert a == b and len(a) == 2 * (6 + 2 + 16)
    assert all((corpus / p).read_bytes() == (tmp_path / "again" / p).read_bytes() for p in a)


@pytest.mark.parametrize("mode", ["simple", "mahalanobis"])
def test_train_score_evaluate(corpus, tmp_path, capsys, mode):
    out = tmp_path / "run"
    common = ["--corpus", corpus, "--out", out, "--mode", mode, "--seeds", "0,1", *FAST]
    assert run("train", *common) == 0
    for seed in (0, 1):
        run_dir = out / f"seed_{seed}"
        assert len(list(run_dir.glob("model_*.bin"))) == 2
        assert len(list(run_dir.glob("cov_*.bin"))) == (2 if mode == "mahalanobis" else 0)
        assert (run_dir / "loss_fan_section_00.csv").read_text().startswith("epoch,loss\n1,")
    assert run("score", *common) == 0
    sub = out / "seed_0" / "submission"
    scores = ds.read_submission(sub / "anomaly_score_valve_section_00.csv")
    decisions = ds.read_submission(sub / "decision_result_valve_section_00.csv", int)
    assert len(scores) == len(decisions) == 16
    phi = Threshold.from_text((out / "seed_0" / "threshold_valve_section_00.txt").read_text()).phi
    assert [d for _, d in decisions] == [int(s > phi) for _, s in scores]

    capsys.readouterr()
    assert run("evaluate", *common) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1].startswith("official_score,")
    assert 0.0 <= float(lines[-1].split(",")[1]) <= 1.0
    assert (out / "seed_1" / "report.csv").exists() and (out / "aggregate.csv").exists()

    assert run("report", "--out", out) == 0
    table = capsys.readouterr().out
    assert "fan_section_00" in table and "+/-" in table


def test_score_and_evaluate_are_deterministic(corpus, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        common = ["--corpus", corpus, "--out", out, *FAST]
        assert run("train", *common) == 0 and run("score", *common) == 0 and run("evaluate", *common) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert any(p.suffix == ".bin" for p in files)
    for p in files:
        assert (outs[0] / p).read_bytes() == (outs[1] / p).read_bytes(), p


def test_mode_mismatch(corpus, tmp_path, capsys):
    common = ["--corpus", corpus, "--out", tmp_path, *FAST]
    assert run("train", *common, "--mode", "simple") == 0
    assert run("score", *common, "--mode", "mahalanobis") == 1
    assert "mode" in capsys.readouterr().err


def test_score_without_models(corpus, tmp_path, capsys):
    assert run("score", "--corpus", corpus, "--out", tmp_path, *FAST) == 1
    assert "train" in capsys.readouterr().err


def test_corrupt_train_wav_names_file(corpus, tmp_path, capsys):
    copy = tmp_path / "corpus"
    shutil.copytree(corpus, copy)
    victim = sorted((copy / "fan" / "train").glob("*.wav"))[1]
    victim.write_bytes(victim.read_bytes()[:30])
    assert run("train", "--corpus", copy, "--out", tmp_path / "run", *FAST) == 1
    err = capsys.readouterr().err
    assert victim.name in err and "fan section_00" in err


def test_unlabeled_corpus_exit_3(corpus, tmp_path, capsys):
    copy = tmp_path / "corpus"
    shutil.copytree(corpus, copy)
    for machine in ("fan", "valve"):
        for i, p in enumerate(sorted((copy / machine / "test").glob("*.wav"))):
            p.rename(p.with_name(f"section_00_{i:04d}.wav"))
    common = ["--corpus", copy, "--out", tmp_path / "run", *FAST]
    assert run("train", *common) == 0
    assert run("score", *common) == 0
    assert run("evaluate", *common) == 3
    assert "score" in capsys.readouterr().err


def test_all_identical_scores_give_zero(corpus, tmp_path, capsys):
    common = ["--corpus", corpus, "--out", tmp_path, *FAST]
    assert run("train", *common) == 0 and run("score", *common) == 0
    for path in (tmp_path / "seed_0" / "submission").glob("anomaly_score_*.csv"):
        rows = ds.read_submission(path)
        path.write_text("".join(f"{name},0.5\n" for name, _ in rows))
    capsys.readouterr()
    assert run("evaluate", *common) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "official_score,0.0"


def test_report_without_runs(tmp_path, capsys):
    assert run("report", "--out", tmp_path) == 1
    assert "evaluate" in capsys.readouterr().err
