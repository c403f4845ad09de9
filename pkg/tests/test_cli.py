import json

import pytest

from stepdistill.cli import main
from stepdistill.config import dump_config


@pytest.fixture
def cfg_file(small_config, tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(dump_config(small_config))
    return p


def test_verify_exits_zero(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 8 and "FAIL" not in out


def test_missing_config_exits_one(tmp_path, capsys):
    assert main(["distill", "--config", str(tmp_path / "none.yaml")]) == 1
    assert "not found" in capsys.readouterr().err


def test_unknown_flag_exits_one(capsys):
    assert main(["distill", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_axis_exits_one(cfg_file):
    assert main(["ablate", "--axis", "schedule", "--config", str(cfg_file)]) == 1


def test_invalid_config_exits_one(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("rl:\n  algorithm: a2c\n")
    assert main(["distill", "--config", str(p)]) == 1


def test_distill_then_evaluate(cfg_file, small_config, capsys):
    assert main(["distill", "--config", str(cfg_file), "--quiet"]) == 0
    out = capsys.readouterr().out
    assert "run directory" in out and "baseline" in out
    run_dir = out.split("run directory: ")[1].splitlines()[0].strip()
    assert main(["evaluate", "--config", str(cfg_file), "--checkpoint", f"{run_dir}/student.ckpt"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["kind"] == "student" and res["fid"] >= 0


def test_corrupt_checkpoint_exits_one(cfg_file, tmp_path):
    bad = tmp_path / "junk.ckpt"
    bad.write_bytes(b"SDCKPT\x00\x01" + b"\xff" * 4)
    assert main(["evaluate", "--config", str(cfg_file), "--checkpoint", str(bad)]) == 1


def test_runtime_failure_exits_two(cfg_file, monkeypatch, capsys):
    import stepdistill.harness as harness

    def boom(cfg, checkpoint):
        raise FloatingPointError("overflow in evaluation")

    monkeypatch.setattr(harness, "run_evaluate", boom)
    assert main(["evaluate", "--config", str(cfg_file), "--checkpoint", "x.ckpt"]) == 2
    assert "runtime failure" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
