import hashlib
import json
import subprocess
import sys

import pytest

from nonlocal_lab import cli
from nonlocal_lab.config import COMMANDS, ConfigError, default_config, parse_config
from nonlocal_lab.io import read_csv

EXPECTED = {
    "verify-calculus": ["structure.csv", "calculus_residuals.csv", "calculus_residuals.svg"],
    "audit-spaces": ["embedding_audit.csv", "poincare.csv", "summary.json", "energy_ratio.svg"],
    "solve": ["trajectory_report.csv", "trajectory.csv", "summary.json", "norms.svg"],
    "carleman-certify": ["certificate.csv", "summary.json", "certificate.svg"],
    "backward": ["backward_rho.csv", "stability_audit.csv", "summary.json", "backward_rho.svg",
                 "stability_fit.svg"],
    "inverse-source": ["source_svd.csv", "source_truncation.csv", "summary.json",
                       "source_svd.svg", "source_truncation.svg"],
}


def _config(tmp_path, text="{}"):
    p = tmp_path / "config.json"
    p.write_text(text)
    return str(p)


@pytest.mark.parametrize("command", COMMANDS)
def test_command_runs_and_writes_manifest(command, tmp_path):
    out = tmp_path / "out"
    assert cli.main([command, "--config", _config(tmp_path), "--out", str(out), "--fast"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_status"] == 0 and man["command"] == command
    assert all(man["invariants"].values())
    listed = {f["path"]: f["sha256"] for f in man["files"]}
    assert set(EXPECTED[command]) <= set(listed)
    for name, digest in listed.items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert {"seed", "wall_time_seconds", "versions", "config"} <= set(man)


def test_solve_reports_monotone_decay(tmp_path):
    out = tmp_path / "solve"
    cfg = _config(tmp_path, '{"solver": {"source": "zero", "scheme": "implicit_euler"}}')
    assert cli.main(["solve", "--config", cfg, "--out", str(out), "--fast"]) == 0
    rows = read_csv(out / "trajectory_report.csv")
    assert all(r["l2_decay"] in ("True", "true", "1") for r in rows)


def test_order_bound_violation_exits_2(tmp_path, capsys):
    text = ('{\n  "kernel": {\n    "order": {"preset": "sine", "beta_lo": 0.3,\n'
            '              "beta_hi": 1.2}\n  }\n}\n')
    assert cli.main(["audit-spaces", "--config", _config(tmp_path, text),
                     "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "< 1" in err and "line 4" in err


@pytest.mark.parametrize("text,line", [
    ('{\n  "mesh": {"elements": 1}\n}', 2),
    ('{\n  "seed": 0,\n  "bogus": 3\n}', 1),
    ('{\n  "grid": {"T": 0.5,\n   "steps": "ten"}\n}', 3),
    ('{\n  "seed": 0,\n  oops\n}', 3),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as e:
        parse_config(text, "solve")
    assert e.value.line == line


def test_config_defaults_and_presets():
    cfg = parse_config('{"kernel": {"order": {"preset": "bump"}}}', "solve")
    assert cfg["kernel"]["order"] == {"preset": "bump"}
    assert parse_config("{}", "backward") == default_config("backward")
    with pytest.raises(ConfigError):
        parse_config('{"solver": {"kind": "neumann"}}', "backward")
    with pytest.raises(ConfigError):
        parse_config('{"kernel": {"order": {"preset": "sine", "beta_lo": 0.6, "beta_hi": 0.5}}}',
                     "solve")


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["solve", "--config", str(tmp_path / "none.json")]) == 2


def test_failed_invariant_exits_1(tmp_path, capsys):
    # an impossibly tight tolerance must surface as a failed invariant
    cfg = _config(tmp_path, '{"experiment": {"fields": 2, "tolerance": 1e-300}}')
    assert cli.main(["verify-calculus", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "failed invariants" in capsys.readouterr().err
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["exit_status"] == 1


def test_deterministic_reruns_are_byte_identical(tmp_path):
    cfg = _config(tmp_path, '{"experiment": {"fields": 5}}')
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert cli.main(["verify-calculus", "--config", cfg, "--out", str(o), "--seed", "7"]) == 0
    for name in ("structure.csv", "calculus_residuals.csv", "calculus_residuals.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_csv_format(tmp_path):
    out = tmp_path / "o"
    cli.main(["verify-calculus", "--config", _config(tmp_path, '{"experiment": {"fields": 2}}'),
              "--out", str(out), "--fast"])
    raw = (out / "calculus_residuals.csv").read_bytes()
    assert b"\r" not in raw
    svg = (out / "calculus_residuals.svg").read_text()
    assert "<script" not in svg


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "nonlocal_lab.cli", "solve", "--config",
                        _config(tmp_path), "--out", str(tmp_path / "o"), "--fast"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "solve: ok" in r.stdout
