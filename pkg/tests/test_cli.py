import json

import pytest

from tfdyn.cli import main

SHORT = ["--total-steps", "150", "--t0", "100", "--quiet"]


def test_dataset_to_stdout(capsys):
    assert main(["dataset", "--task", "even_pairs", "--l-max", "3", "--quiet"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1 + 2 + 4 + 8


def test_preset_with_override(tmp_path):
    assert main(["train", "--config", "paper_parity", "--lambda", "5", "--out-dir", str(tmp_path)] + SHORT) == 0
    cfg = json.loads((tmp_path / "config-as-run.json").read_text())
    assert cfg["lambda"] == 5.0 and cfg["task"] == "parity_cot" and cfg["t0"] == 100


def test_train_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["train", "--task", "even_pairs", "--out-dir", str(d)] + SHORT) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    # config-as-run.json records out_dir, which differs by construction
    for n in [n for n in names if n != "config-as-run.json"]:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_empty_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "task" in capsys.readouterr().err


def test_bad_flag_exit_1(capsys):
    assert main(["train", "--no-such-flag"]) == 1


def test_invalid_value_names_field(capsys):
    assert main(["train", "--task", "even_pairs", "--eta", "-1"]) == 1
    assert "eta" in capsys.readouterr().err


def test_verify_missing_dir(tmp_path):
    assert main(["verify", str(tmp_path / "nope"), "--quiet"]) == 1


def test_verify_short_run_phase1(tmp_path, capsys):
    assert main(["train", "--task", "even_pairs", "--out-dir", str(tmp_path)] + SHORT) == 0
    code = main(["verify", str(tmp_path), "--symmetry", "--quiet"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["passed"] is True


def test_cot_infer_ideal(capsys):
    assert main(["cot-infer", "--ideal", "--length", "5", "--exhaustive"]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("accuracy 60/60 = 1.000000")


def test_sweep_writes_subdirs(tmp_path):
    assert main(["sweep", "--task", "even_pairs", "--lambda", "2,4", "--out-dir", str(tmp_path)] + SHORT) == 0
    assert (tmp_path / "lambda_2" / "metrics.csv").exists()
    assert (tmp_path / "lambda_4" / "metrics.csv").exists()


def test_maxmargin_from_checkpoint(tmp_path, capsys):
    assert main(["train", "--task", "even_pairs", "--out-dir", str(tmp_path / "r"), "--total-steps", "120",
                 "--t0", "100", "--quiet"]) == 0
    assert main(["maxmargin", "--checkpoint", str(tmp_path / "r" / "ckpt_100.json"), "--quiet"]) == 0
    sol = json.loads(capsys.readouterr().out)
    assert sol["kkt"]["feasibility"] <= 1e-8
    assert len(sol["u_star"]) == 12
