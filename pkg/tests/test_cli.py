import json

import numpy as np
import pytest

from qhrx.cli import COMMANDS, apply_override, load_scenario, run_command
from qhrx.errors import ConfigError


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_dry_run_writes_only_manifest(tmp_path):
    assert run_command(["calibrate", "--dry-run", "--out", str(tmp_path)]) == 0
    assert [p.name for p in tmp_path.iterdir()] == ["manifest.json"]
    m = manifest(tmp_path)
    assert m["status"] == "ok" and m["exit_code"] == 0
    assert m["root_seed"] == load_scenario().seed


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_every_subcommand_resolves(tmp_path, command):
    assert run_command([command, "--dry-run", "--out", str(tmp_path)]) == 0


def test_override_is_applied_and_recorded(tmp_path):
    assert run_command(["drift", "--dry-run", "--out", str(tmp_path), "--set", "characterize.drift.step_s=60"]) == 0
    assert manifest(tmp_path)["scenario"]["characterize"]["drift"]["step_s"] == 60


def test_override_parsing():
    doc = {"a": {"b": 1}}
    apply_override(doc, "a.b=[1, 2]")
    assert doc == {"a": {"b": [1, 2]}}
    apply_override(doc, "a.b=null")
    assert doc == {"a": {"b": None}}
    with pytest.raises(ConfigError):
        apply_override(doc, "a.typo=1")
    with pytest.raises(ConfigError):
        apply_override(doc, "a.b")
    with pytest.raises(ConfigError):
        apply_override(doc, "missing.key=1")


@pytest.mark.parametrize(
    "argv",
    [
        ["drift", "--set", "nonsense"],
        ["drift", "--scenario", "/nonexistent/scenario.yaml"],
        ["drift", "--threads", "0"],
        ["rng-test"],
    ],
)
def test_config_errors_exit_2_with_manifest(tmp_path, argv):
    assert run_command(argv + ["--out", str(tmp_path)]) == 2
    assert manifest(tmp_path)["exit_code"] == 2


def test_numeric_failure_exits_3(tmp_path):
    raw = tmp_path / "raw.bin"
    raw.write_bytes(np.random.default_rng(0).integers(0, 256, 20_000, dtype=np.uint8).tobytes())
    code = run_command(["qrng-extract", "--input", str(raw), "--h-min", "1.0", "--out", str(tmp_path / "o")])
    assert code == 3
    m = manifest(tmp_path / "o")
    assert m["status"] == "failed" and "error" in m


def test_check_failure_exits_4(tmp_path):
    argv = ["drift", "--check", "--out", str(tmp_path), "--set", "characterize.drift.sigma_deg=[5, 5, 5]", "--set", "characterize.drift.duration_s=3600"]
    assert run_command(argv) == 4
    m = manifest(tmp_path)
    assert m["status"] == "check-failed"
    assert any(not c["passed"] for c in m["checks"])


def test_check_pass_exits_0(tmp_path, capsys):
    assert run_command(["drift", "--check", "--out", str(tmp_path)]) == 0
    assert "CHECK drift_cmrr: PASS" in capsys.readouterr().out


def test_outputs_are_byte_identical_across_runs(tmp_path):
    argv = ["calibrate", "--set", "qrng.calibration_samples=16384", "--set", "qrng.cmrr_sweep_db=[40]"]
    assert run_command(argv + ["--out", str(tmp_path / "a")]) == 0
    assert run_command(argv + ["--out", str(tmp_path / "b")]) == 0
    ha = {o["path"]: o["sha256"] for o in manifest(tmp_path / "a")["outputs"]}
    hb = {o["path"]: o["sha256"] for o in manifest(tmp_path / "b")["outputs"]}
    assert ha == hb and len(ha) >= 3
    for name in ha:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_plot_flag_renders_figures(tmp_path):
    assert run_command(["drift", "--plot", "--out", str(tmp_path), "--set", "characterize.drift.duration_s=3600"]) == 0
    assert (tmp_path / "drift.png").stat().st_size > 0
    assert run_command(["drift", "--out", str(tmp_path / "np"), "--set", "characterize.drift.duration_s=3600"]) == 0
    assert not list((tmp_path / "np").glob("*.png"))


def test_pic_scan_reports_fit(tmp_path):
    assert run_command(["pic-scan", "--check", "--out", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "pic_scan_fit.json").read_text())
    assert "vbs1" in fit and "vbs2" in fit


def test_qkd_estimate_small(tmp_path):
    assert run_command(["qkd-estimate", "--out", str(tmp_path), "--set", "qkd.n_symbols=20000"]) == 0
    rep = json.loads((tmp_path / "skr_report.json").read_text())
    assert rep["nominal"]["skr_per_symbol"] >= 0 and rep["estimated"]["skr_per_symbol"] >= 0


def test_extract_then_test_roundtrip(tmp_path):
    raw = tmp_path / "raw.bin"
    raw.write_bytes(np.random.default_rng(1).integers(0, 256, 200_000, dtype=np.uint8).tobytes())
    assert run_command(["qrng-extract", "--input", str(raw), "--h-min", "15.9", "--out", str(tmp_path / "x")]) == 0
    outs = [o["path"] for o in manifest(tmp_path / "x")["outputs"]]
    packed = next(p for p in outs if p.endswith(".bin"))
    code = run_command(["rng-test", "--input", str(tmp_path / "x" / packed), "--set", "qrng.test_substring_len=8000", "--out", str(tmp_path / "t")])
    assert code == 0
    assert any(o["path"].endswith(".csv") for o in manifest(tmp_path / "t")["outputs"])
