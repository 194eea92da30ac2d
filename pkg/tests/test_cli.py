import json
import os
import subprocess
import sys

import pytest

from nanolume import cli


def run_cli(*args, env=None):
    e = dict(os.environ)
    e.update(env or {})
    return subprocess.run([sys.executable, "-m", "nanolume.cli", *args], capture_output=True, text=True, env=e)


def tree_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_parser_lists_subcommands():
    ap = cli.build_parser()
    for name in ("g2", "lifetime", "saturation", "antenna", "modes"):
        assert ap.parse_args([name]).command == name
    with pytest.raises(SystemExit):
        ap.parse_args(["g2", "--seed", "-1"])


def test_modes_writes_table(tmp_path):
    assert cli.main(["modes", "--out", str(tmp_path)]) == cli.EXIT_OK
    lines = (tmp_path / "modes.csv").read_text().splitlines()
    assert lines[0].startswith("# nanolume") and lines[3] == "a_nm,lambda_nm,V,n_eff"
    assert len(lines) == 4 + 6 * 3


def test_g2_outputs_and_byte_identical_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["g2", "--preset", "fig3a", "--seed", "7", "--out", str(a)]) == cli.EXIT_OK
    assert cli.main(["g2", "--preset", "fig3a", "--seed", "7", "--out", str(b)]) == cli.EXIT_OK
    assert set(tree_bytes(a)) == {"g2_histogram.csv", "g2_histogram.json", "g2_fit.json"}
    assert tree_bytes(a) == tree_bytes(b)
    rep = json.loads((a / "g2_fit.json").read_text())
    assert rep["provenance"]["seed"] == 7 and rep["converged"]


def test_seed_changes_output(tmp_path):
    cli.main(["g2", "--preset", "fig3a", "--seed", "1", "--out", str(tmp_path / "a")])
    cli.main(["g2", "--preset", "fig3a", "--seed", "2", "--out", str(tmp_path / "b")])
    assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "b")


def test_config_file_merges_over_preset(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"stream": {"signal_fraction": 0.8}}))
    merged = cli.resolve_config("g2", "fig3a", str(cfg))
    assert merged["stream"]["signal_fraction"] == 0.8
    assert merged["stream"]["duration_ns"] == 1e7


def test_preset_for_other_command_is_an_error(tmp_path, capsys):
    assert cli.main(["saturation", "--preset", "fig3a", "--out", str(tmp_path)]) == cli.EXIT_ERROR
    assert "belongs to" in capsys.readouterr().err


@pytest.mark.parametrize("content", ["[1, 2]", "{not json"])
def test_bad_config_file(tmp_path, content):
    p = tmp_path / "c.json"
    p.write_text(content)
    assert cli.main(["g2", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_ERROR


def test_missing_config_keys_and_files(tmp_path):
    assert cli.main(["g2", "--out", str(tmp_path)]) == cli.EXIT_ERROR
    assert cli.main(["g2", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == cli.EXIT_ERROR
    bad = tmp_path / "a.json"
    bad.write_text(json.dumps({"colour": 1}))
    assert cli.main(["antenna", "--config", str(bad), "--out", str(tmp_path)]) == cli.EXIT_ERROR


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("NANOLUME_THREADS", "3")
    assert cli.resolve_threads(None) == 3
    assert cli.resolve_threads(2) == 2
    monkeypatch.setenv("NANOLUME_THREADS", "many")
    with pytest.raises(ValueError):
        cli.resolve_threads(None)
    with pytest.raises(ValueError):
        cli.resolve_threads(0)


def test_saturation_subprocess_exit_code_and_report(tmp_path):
    out = tmp_path / "s"
    r = run_cli("saturation", "--preset", "fig4b", "--out", str(out))
    assert r.returncode == 0, r.stderr
    rep = json.loads((out / "saturation_fit.json").read_text())
    assert set(rep["devices"]) == {"bulk", "nanowire"}
    assert rep["comparison"]["I_sat_ratio"] > 5
    assert str(out / "saturation_nanowire.csv") in r.stdout


def test_unconverged_run_exits_one(tmp_path, monkeypatch, capsys):
    monkeypatch.setitem(cli.COMMANDS, "modes", lambda cfg, seed, threads, out: False)
    assert cli.main(["modes", "--out", str(tmp_path)]) == cli.EXIT_NOT_CONVERGED
    assert "did not converge" in capsys.readouterr().err


def test_antenna_tiny_run(tmp_path):
    cfg = tmp_path / "a.json"
    cfg.write_text(json.dumps({"cell_nm": 40.0, "lateral_nm": 800.0, "bulk_lateral_nm": 1200.0,
                               "substrate_nm": 200.0, "air_nm": 200.0, "wavelengths_nm": [637.0],
                               "box_half_cells": 3, "polarizations": ["s"], "include_bulk": False,
                               "scene": {"radius_nm": 100.0, "height_nm": 400.0}}))
    out = tmp_path / "o"
    assert cli.main(["antenna", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    rep = json.loads((out / "antenna_report.json").read_text())
    assert 0 <= rep["nanowire"]["s"]["eta"][0] <= 1
    assert (out / "antenna_s.csv").exists() and (out / "far_field_s.csv").exists()
