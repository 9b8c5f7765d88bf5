import csv
import json

import numpy as np
import pytest

from cifar_pollution import cifar_io, cli
from cifar_pollution.corruption import CorruptionSpec, SaltPepper

SMALL = ["--train-size", "100", "--val-size", "50", "--test-size", "100", "--epochs", "1",
         "--train-batch", "50", "--eval-batch", "50"]


def test_corrupt_preset_resolution():
    cmd = cli.parse_args(["corrupt", "--noise", "salt-pepper", "--level", "strong",
                          "--fraction", "0.1", "--seed", "7", "--out", "d/"])
    assert cmd.specs == [SaltPepper(0.2)]
    assert cmd.plans[0].fraction == 0.1 and cmd.plans[0].master_seed == 7


def test_explicit_parameter_selects_noise():
    cmd = cli.parse_args(["corrupt", "--sigma-blur", "1.5"])
    assert cmd.specs == [CorruptionSpec("blur", 1.5)]


def test_no_subcommand_is_usage_error(capsys):
    assert cli.main([]) == 2
    assert "subcommand" in capsys.readouterr().err


def test_bad_fraction_names_the_flag(capsys):
    assert cli.main(["corrupt", "--fraction", "1.5"]) == 2
    err = capsys.readouterr().err
    assert "--fraction" in err and "1.5" in err


def test_level_conflicts_with_explicit_parameter(capsys):
    assert cli.main(["corrupt", "--noise", "gaussian", "--level", "mild", "--sigma", "0.2"]) == 2
    assert "--level" in capsys.readouterr().err


def test_mismatched_parameter_and_noise(capsys):
    assert cli.main(["corrupt", "--noise", "gaussian", "--p-total", "0.1"]) == 2
    assert "--p-total" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"fraction": 0.2, "bogus": 1}))
    assert cli.main(["corrupt", "--config", str(cfg)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_config_merge_flags_win(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"fraction": 0.2, "seed": 3, "noise": "blur", "level": "mild"}))
    cmd = cli.parse_args(["corrupt", "--config", str(cfg), "--seed", "5"])
    assert cmd.plans[0].fraction == 0.2
    assert cmd.plans[0].master_seed == 5
    assert cmd.specs == [CorruptionSpec("blur", 0.5)]


def test_config_fraction_is_validated(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"fraction": 2}))
    assert cli.main(["corrupt", "--config", str(cfg)]) == 2
    assert "--fraction" in capsys.readouterr().err


def test_help_lists_defaults(capsys):
    assert cli.main(["sweep", "--help"]) == 0
    out = " ".join(capsys.readouterr().out.split())
    assert "(default: 0.01)" in out and "(default: desk)" in out


def test_sweep_profile_defaults():
    cmd = cli.parse_args(["sweep", "--noise", "salt-pepper"])
    assert cmd.options["model"] == "small_cnn" and cmd.options["epochs"] == 30
    assert len(cmd.plans) == 2 * 3
    paper = cli.parse_args(["sweep", "--profile", "paper", "--noise", "gaussian"])
    assert paper.options["model"] == "resnet18" and len(paper.plans) == 90


def test_sweep_explicit_intensities():
    cmd = cli.parse_args(["sweep", "--noise", "gaussian", "--sigma", "0.1", "0.2", "--fractions", "0.5",
                          "--seeds", "1"])
    assert [p.spec.param for p in cmd.plans] == [0.1, 0.2]


def test_missing_data_dir(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert cli.main(["corrupt", "--data-dir", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_report_without_runs(tmp_path, capsys):
    assert cli.main(["report", "--results", str(tmp_path)]) == 1
    assert "no runs found" in capsys.readouterr().err


def test_corrupt_writes_cifar_format(synthetic_cifar_dir, tmp_path):
    out = tmp_path / "d"
    code = cli.main(["corrupt", "--data-dir", str(synthetic_cifar_dir), "--noise", "salt-pepper",
                     "--level", "strong", "--fraction", "0.1", "--seed", "7", "--out", str(out)])
    assert code == 0
    polluted = cifar_io.read_batch_file(out / "train_polluted.bin")
    assert len(polluted) == 45000
    idx = np.loadtxt(out / "corrupted_indices.txt", dtype=np.int64)
    assert len(idx) == 4500
    full = cifar_io.load_train(synthetic_cifar_dir)
    train, _ = cifar_io.split_train_val(full, 0)
    changed = np.flatnonzero(np.any(polluted.images != train.images, axis=(1, 2, 3)))
    assert set(changed) <= set(idx)


def test_train_evaluate_sweep_report(synthetic_cifar_dir, tmp_path, capsys):
    data = ["--data-dir", str(synthetic_cifar_dir)]
    run_dir = tmp_path / "train"
    assert cli.main(["train", *data, *SMALL, "--out", str(run_dir), "--noise", "gaussian",
                     "--fraction", "0.5"]) == 0
    assert (run_dir / "best.ckpt").is_file() and (run_dir / "metrics.json").is_file()
    capsys.readouterr()
    assert cli.main(["evaluate", *data, "--checkpoint", str(run_dir / "best.ckpt"),
                     "--test-size", "100", "--noise", "blur", "--level", "strong"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["spec"] == {"noise_type": "blur", "param": 2.0} and 0 <= result["top1"] <= 1

    sweep_dir = tmp_path / "sweep"
    assert cli.main(["sweep", *data, *SMALL, "--noise", "salt-pepper", "--fractions", "0", "0.1",
                     "--seeds", "0", "1", "--out", str(sweep_dir)]) == 0
    with open(sweep_dir / "runs.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and all(r["status"] == "ok" for r in rows)
    capsys.readouterr()
    assert cli.main(["report", "--results", str(sweep_dir)]) == 0
    assert "salt-pepper" in capsys.readouterr().out
    pytest.importorskip("matplotlib")
    assert cli.main(["report", "--results", str(sweep_dir), "--plot"]) == 0
    assert sorted(p.name for p in sweep_dir.glob("*.png")) == ["salt-pepper_acc.png", "salt-pepper_loss.png"]
