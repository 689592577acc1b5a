import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracspde.cli import main, run_command
from fracspde.config import ConfigError, parse_config, serialize, with_overrides

MINIMAL = """
[model]
alpha = 2
beta = 1

[grid]
half_width = 8
n = 128
T = 0.5
nt = 16
"""


def read_csv(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def test_minimal_document_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg["model"]["nu"] == 1.0 and cfg["model"]["d"] == 1
    assert cfg["sigma"]["kind"] == "linear"
    assert cfg["run"]["seed"] == 0 and cfg["run"]["replicas"] == 100
    assert cfg.grid.n == 128 and cfg.grid.symbol_tol == 1e-8


def test_alpha_out_of_range_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nalpha = 3\n")
    assert exc.value.key == "model.alpha" and "(0, 2]" in str(exc.value)
    assert exc.value.line == 2


def test_unknown_key_and_section():
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nalpha = 2\ngamma = 1\n")
    assert exc.value.key == "model.gamma" and exc.value.line == 3
    with pytest.raises(ConfigError):
        parse_config("[model]\nalpha = 2\n[extra]\nx = 1\n")


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nalpha = 2\nthis line is broken\n")
    assert exc.value.line == 3
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nalpha = 2\nalpha = 1\n")
    assert exc.value.line == 3


def test_model_constraint_and_bad_value():
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nalpha = 1\nbeta = 1\n")
    assert exc.value.key.startswith("model")
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nalpha = two\n")
    assert exc.value.key == "model.alpha"
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "\n[mu]\natoms = 1, 2\nmasses = 1\n")
    assert exc.value.key == "mu.atoms"


def test_roundtrip():
    cfg = parse_config(MINIMAL + "\n[mu]\natoms = 0.1, -0.30000000000000004\nmasses = 2, 3\n")
    again = parse_config(serialize(cfg))
    assert again == cfg
    assert serialize(again) == serialize(cfg)


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.55, 2.0), nu=st.floats(1e-3, 1e3), seed=st.integers(0, 2 ** 64 - 1),
       scale=st.floats(-5, 5), masses=st.lists(st.floats(0, 10), min_size=1, max_size=4))
def test_roundtrip_property(alpha, nu, seed, scale, masses):
    beta = min(1.0, 0.9 * alpha)  # keeps d < min(2, 1/beta) alpha for d = 1
    text = (f"[model]\nalpha = {alpha!r}\nbeta = {beta!r}\nnu = {nu!r}\n[sigma]\nscale = {scale!r}\n"
            f"[mu]\natoms = {', '.join(repr(0.1 * (i + 1)) for i in range(len(masses)))}\n"
            f"masses = {', '.join(repr(m) for m in masses)}\n[run]\nseed = {seed}\n")
    cfg = parse_config(text)
    assert parse_config(serialize(cfg)) == cfg


def test_overrides():
    cfg = with_overrides(parse_config(MINIMAL), seed=7, replicas=3)
    assert cfg["run"]["seed"] == 7 and cfg["run"]["replicas"] == 3
    with pytest.raises(ConfigError):
        with_overrides(cfg, seed=-1)


def test_ml_command_beta_one(tmp_path):
    cfg = parse_config(MINIMAL + "\n[ml]\nz_min = -30\npoints = 301\n")
    assert run_command("ml", cfg, tmp_path) == 0
    data = read_csv(tmp_path / "ml.csv")
    assert np.max(np.abs(data["E_beta"] - np.exp(data["z"]))) <= 1e-10
    for name in ("manifest.json", "plot.gp", "config.ini"):
        assert (tmp_path / name).exists()
    assert "ml.csv" in (tmp_path / "plot.gp").read_text()


def test_kernel_command_gaussian(tmp_path):
    cfg = parse_config(MINIMAL + "\n[kernel]\ntimes = 0.5, 1, 2\npoints = 101\nx_max = 5\n")
    assert run_command("kernel", cfg, tmp_path) == 0
    data = read_csv(tmp_path / "kernel.csv")
    ref = np.exp(-data["x"] ** 2 / (4 * data["t"])) / np.sqrt(4 * math.pi * data["t"])
    for col in ("G_subordination", "G_spectral"):
        assert np.max(np.abs(data[col] - ref)) <= 1e-6


def test_csv_format(tmp_path):
    cfg = parse_config(MINIMAL + "\n[ml]\npoints = 3\nz_min = -1\n")
    run_command("ml", cfg, tmp_path)
    raw = (tmp_path / "ml.csv").read_bytes()
    assert raw.endswith(b"\n") and b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "z,E_beta"
    assert lines[1] == "-1,0.36787944117144233"


@pytest.mark.parametrize("cmd", ["simulate", "moments", "isometry", "density", "bounds", "upsilon", "blowup"])
def test_rerun_is_byte_identical(tmp_path, cmd):
    text = MINIMAL.replace("beta = 1", "beta = 1") + "\n[mu]\natoms = 0.5, -0.5\nmasses = 1, 1\n[run]\nreplicas = 40\nseed = 5\n"
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text(text)
    assert main([cmd, "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    assert main(["rerun", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["files"]
    for name in manifest["files"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_changes_simulation(tmp_path):
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text(MINIMAL + "\n[mu]\natoms = 0.5, -0.5\nmasses = 1, 1\n")
    main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "simulate.csv").read_bytes() != (tmp_path / "b" / "simulate.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 2


def test_exit_code_validation(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nalpha = 3\n")
    assert main(["ml", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    coarse = tmp_path / "coarse.ini"
    coarse.write_text(MINIMAL.replace("n = 128", "n = 16"))
    assert main(["simulate", "--config", str(coarse), "--out", str(tmp_path / "o2")]) == 1
    assert json.loads((tmp_path / "o2" / "manifest.json").read_text())["exit_status"] == 1


def test_exit_code_numerical(tmp_path):
    blow = tmp_path / "blow.ini"
    blow.write_text(MINIMAL + "\n[sigma]\nkind = power\nscale = 5\nrho = 3\n[initial]\nlevel = 5\n"
                    "[mu]\natoms = 3, -3\nmasses = 40, 40\n[run]\nnoise_kind = noncompensated\noverride = true\n")
    assert main(["simulate", "--config", str(blow), "--out", str(tmp_path / "o")]) == 2


def test_upsilon_command_reports_inverse(tmp_path):
    cfg = parse_config("[model]\nalpha = 2\n[upsilon]\nkappa = 2\n")
    assert run_command("upsilon", cfg, tmp_path) == 0
    summary = json.loads((tmp_path / "manifest.json").read_text())["summary"]
    assert summary["upsilon_inverse"] == pytest.approx(0.5, rel=1e-6)
    data = read_csv(tmp_path / "upsilon.csv")
    np.testing.assert_allclose(data["upsilon"], data["upsilon_closed_form"], rtol=1e-6)
