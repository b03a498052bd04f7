import json
from pathlib import Path

import numpy as np
import pytest

from activelattice import io
from activelattice.cli import main
from activelattice.config import build_profile, load_config
from activelattice.errors import ConfigError
from activelattice.stability import spinodal_mips_closed_form

MIPS = """
[model]
kind = "mips"
N = 100
D = 1.0
lambda = 1.0
gamma = 1.0

[initial]
preset = "sine"
rho_plus = 0.3
rho_minus = 0.3
amplitude = 0.1

[run]
T = 0.01
snapshots = [0.005]
ensemble = 2
seed = 7

[hydro]
M = 50
"""


@pytest.fixture
def mips_toml(tmp_path):
    p = tmp_path / "mips.toml"
    p.write_text(MIPS)
    return p


def _files(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _err(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ---------------------------------------------------------------- config


def test_missing_lambda_names_field(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text(MIPS.replace("lambda = 1.0\n", ""))
    assert main(["simulate", "--config", str(p), "--output", str(tmp_path / "o")]) == 2
    err = _err(capsys)
    assert err["field"] == "model.lambda" and err["exit_code"] == 2
    assert "lambda" in err["message"]


def test_config_error_reports_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(MIPS.replace("N = 100", "N = \"many\""))
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.field == "model.N"
    assert "line 4" in str(exc.value)


def test_unknown_field_and_table(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(MIPS + "\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown table"):
        load_config(p)
    p.write_text(MIPS.replace("gamma = 1.0", "gama = 1.0"))
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.field == "model.gama"


def test_toml_syntax_error_is_config_error(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[model\nkind = 1")
    assert main(["hydro", "--config", str(p)]) == 2
    assert _err(capsys)["error"] == "ConfigError"


def test_overrides_beat_file(mips_toml):
    cfg = load_config(mips_toml, {"model.lambda": 2.5, "run.seed": 11})
    assert cfg.model["lambda"] == 2.5 and cfg.run["seed"] == 11


def test_presets():
    u = (np.linspace(0, 1, 8, endpoint=False),)
    base = {"rho_plus": 0.3, "rho_minus": 0.2, "amplitude": 0.1, "species": "plus", "file": ""}
    rp, rm = build_profile({**base, "preset": "sine"}).evaluate(u)
    np.testing.assert_allclose(rp, 0.3 + 0.1 * np.sin(2 * np.pi * u[0]))
    np.testing.assert_allclose(rm, 0.2)
    rp, rm = build_profile({**base, "preset": "segregated-slab"}).evaluate(u)
    assert np.all(rp[:4] == 0.3) and np.all(rp[4:] == 0) and np.all(rm[4:] == 0.2) and np.all(rm[:4] == 0)
    rp, _ = build_profile({**base, "preset": "step"}).evaluate(u)
    assert np.all(rp[:4] == pytest.approx(0.4)) and np.all(rp[4:] == pytest.approx(0.2))


def test_tabulated_profile(tmp_path):
    t = tmp_path / "p.csv"
    t.write_text("rho_plus,rho_minus\n0.1,0.2\n0.3,0.2\n")
    p = tmp_path / "c.toml"
    p.write_text(MIPS.replace('preset = "sine"', 'preset = "file"\nfile = "p.csv"'))
    cfg = load_config(p)
    rp, rm = cfg.profile().evaluate((np.array([0.0, 0.25, 0.5]),))
    np.testing.assert_allclose(rp, [0.1, 0.2, 0.3])
    np.testing.assert_allclose(rm, 0.2)


# ---------------------------------------------------------------- simulate


def test_simulate_is_byte_deterministic(mips_toml, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(mips_toml), "--seed", "7", "--output", str(a)]) == 0
    assert main(["simulate", "--config", str(mips_toml), "--seed", "7", "--output", str(b), "--workers", "2"]) == 0
    fa, fb = _files(a), _files(b)
    assert fa.keys() == fb.keys() and all(fa[k] == fb[k] for k in fa)


def test_simulate_ensemble_and_manifest(mips_toml, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(mips_toml), "--ensemble", "5", "--output", str(out)]) == 0
    man = io.read_manifest(out)
    assert man["members"] == [f"run_{i:03d}" for i in range(5)]
    assert len(set(man["seeds"]["members"])) == 5 and man["seeds"]["master"] == 7
    assert man["config"]["model"]["lambda"] == 1.0 and man["code_version"]
    for m in man["members"]:
        s = io.read_json(out / m / "summary.json")
        assert s["continuity_residual"] == 0
        fields = io.read_coarse(out / m / "coarse.csv")
        assert [f.t for f in fields] == [0.0, 0.005, 0.01]
    # the manifest alone reproduces a member
    again = tmp_path / "again"
    cfgfile = tmp_path / "from_manifest.toml"
    cfgfile.write_text(_toml(man["config"]))
    assert main(["simulate", "--config", str(cfgfile), "--output", str(again)]) == 0
    assert (again / "run_003" / "snapshots.csv").read_bytes() == (out / "run_003" / "snapshots.csv").read_bytes()


def _toml(cfg: dict) -> str:
    lines = []
    for section, vals in cfg.items():
        lines.append(f"[{section}]")
        for k, v in vals.items():
            if isinstance(v, bool):
                lines.append(f"{k} = {str(v).lower()}")
            elif isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            else:
                lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def test_output_root_env(mips_toml, tmp_path, monkeypatch):
    monkeypatch.setenv(io.OUTPUT_ENV, str(tmp_path / "root"))
    assert main(["hydro", "--config", str(mips_toml)]) == 0
    assert (tmp_path / "root" / "hydro" / "hydro.csv").exists()


def test_plot_writes_figures(mips_toml, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(mips_toml), "--output", str(out), "--plot"]) == 0
    assert (out / "coarse_fields.png").stat().st_size > 1000
    h = tmp_path / "h"
    assert main(["hydro", "--config", str(mips_toml), "--output", str(h), "--plot"]) == 0
    assert (h / "hydro_fields.png").exists() and (h / "hydro.csv").exists()


# ---------------------------------------------------------------- hydro / spde / stability


def test_hydro_flock_uniform_is_constant(tmp_path):
    p = tmp_path / "flock.toml"
    p.write_text(
        '[model]\nkind = "flock"\nN = 64\nlambda = 1.0\nbeta = 0.5\n'
        '[initial]\npreset = "constant"\nrho_plus = 0.5\nrho_minus = 0.5\n'
        "[run]\nT = 0.05\n"
    )
    out = tmp_path / "o"
    assert main(["hydro", "--config", str(p), "--model", "flock", "--output", str(out)]) == 0
    states = io.read_hydro(out / "hydro.csv")
    for s in states:
        np.testing.assert_allclose(s.rho, 1.0, atol=1e-12)
        np.testing.assert_allclose(s.m, 0.0, atol=1e-12)


def test_spde_header_records_noise_mode(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text(
        '[model]\nkind = "mips"\nN = 1000\nlambda = 1.0\ngamma = 1.0\n'
        "[initial]\nrho_plus = 0.2\nrho_minus = 0.2\n[run]\nT = 0.001\nensemble = 2\n[hydro]\nM = 16\n"
    )
    for mode in ("conservative", "additive"):
        out = tmp_path / mode
        assert main(["spde", "--config", str(p), "--noise-mode", mode, "--output", str(out)]) == 0
        meta, rows = io.read_csv(out / "spde_variance.csv")
        assert meta["noise_mode"] == mode
        assert io.read_manifest(out)["noise_mode"] == mode
    out = tmp_path / "nl"
    assert main(["spde", "--config", str(p), "--nonlinear", "--output", str(out)]) == 0
    meta, _ = io.read_csv(out / "member_000.csv")
    assert meta["noise_mode"] == "conservative"


def test_stability_mips_sweep_matches_closed_form(tmp_path):
    out = tmp_path / "st"
    args = ["stability", "--model", "mips", "--sweep", "--output", str(out), "--n-rho", "5", "--n-pe", "4"]
    assert main(args) == 0
    _, rows = io.read_csv(out / "mips_spinodal.csv")
    assert len(rows) == 49
    for r in rows:
        cf = spinodal_mips_closed_form(float(r["rho0"]))
        assert abs(float(r["pe_spinodal"]) - cf) <= 1e-4 * cf
    _, grid = io.read_csv(out / "mips_phase_grid.csv")
    assert {r["verdict"] for r in grid} <= {"STABLE", "UNSTABLE"}


def test_stability_point(tmp_path, capsys):
    assert main(["stability", "--model", "mips", "--rho0", "0.75", "--pe", "6", "--output", str(tmp_path)]) == 0
    point = json.loads(capsys.readouterr().out.splitlines()[0])
    assert point["verdict"] == "UNSTABLE"


def test_selfdiffusion_outputs(tmp_path):
    out = tmp_path / "sd"
    args = ["selfdiffusion", "--rho", "0.2,0.8", "--L", "32", "--budget", "20", "--ensemble", "3", "--output", str(out)]
    assert main(args) == 0
    _, rows = io.read_csv(out / "ds_table.csv")
    assert [r["flag"] for r in rows] == ["", ""]
    assert float(rows[0]["d_s"]) > float(rows[1]["d_s"])


# ---------------------------------------------------------------- compare / sweep


def test_compare_uniform_state_at_noise_floor(tmp_path):
    p = tmp_path / "u.toml"
    p.write_text(
        '[model]\nkind = "mips"\nN = 400\nlambda = 1.0\ngamma = 1.0\n'
        '[initial]\npreset = "constant"\nrho_plus = 0.3\nrho_minus = 0.3\n'
        "[run]\nT = 0.01\nensemble = 4\nseed = 1\n[hydro]\nM = 100\n"
    )
    micro, hydro, out = tmp_path / "m", tmp_path / "h", tmp_path / "c"
    assert main(["simulate", "--config", str(p), "--output", str(micro)]) == 0
    assert main(["hydro", "--config", str(p), "--output", str(hydro)]) == 0
    assert main(["compare", "--micro", str(micro), "--hydro", str(hydro), "--output", str(out)]) == 0
    rep = io.read_json(out / "compare.json")
    ell = io.read_manifest(micro)["ell"]
    floor = (2 * ell + 1) ** -0.5
    for snap in rep["snapshots"]:
        # E|X| for a block mean of variance rho(1 - rho)/(2l+1) is sqrt(2/pi) of its std
        assert 0.3 * floor < snap["member_l1_rho"] < 1.5 * floor
        # averaging over members lowers the distance of the mean field
        assert snap["l1_rho"] < snap["member_l1_rho"]


def test_compare_parameter_mismatch(mips_toml, tmp_path, capsys):
    micro, hydro = tmp_path / "m", tmp_path / "h"
    assert main(["simulate", "--config", str(mips_toml), "--output", str(micro)]) == 0
    assert main(["hydro", "--config", str(mips_toml), "--output", str(hydro), "--set", "model.lambda=2"]) == 0
    assert main(["compare", "--micro", str(micro), "--hydro", str(hydro), "--output", str(tmp_path / "c")]) == 3
    assert _err(capsys)["error"] == "ParameterMismatch"


def test_sweep_runs_each_value(mips_toml, tmp_path):
    out = tmp_path / "sw"
    args = ["sweep", "--config", str(mips_toml), "--target", "hydro", "--param", "model.lambda",
            "--values", "0.5,2", "--output", str(out)]
    assert main(args) == 0
    _, rows = io.read_csv(out / "sweep.csv")
    assert [r["exit_code"] for r in rows] == ["0", "0"]
    for r in rows:
        man = io.read_manifest(out / r["directory"])
        assert man["config"]["model"]["lambda"] == float(r["value"])


def test_runtime_error_exit_code(tmp_path, capsys):
    p = tmp_path / "x.toml"
    p.write_text(MIPS.replace("rho_plus = 0.3", "rho_plus = 0.9"))
    assert main(["simulate", "--config", str(p), "--output", str(tmp_path / "o")]) == 3
    assert _err(capsys)["error"] == "ProfileInvalid"


def test_bad_arguments_exit_2(capsys):
    assert main(["stability"]) == 2
    assert _err(capsys)["exit_code"] == 2
