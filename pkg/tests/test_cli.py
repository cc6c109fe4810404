import json

import numpy as np
import pytest

from noiseavalanche import cli
from noiseavalanche.errors import ValidationError
from noiseavalanche.scenarios import PRESETS, build_scenario, load_config


def run_cli(args, capsys):
    code = cli.main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_presets_encode_figure_parameters():
    two = build_scenario("two_mode")
    assert (two.n_modes, two.coherent[1], two.realizations, two.n_steps) == (2, 1.0, 5000, 300)
    assert two.chain.kappa[0] == pytest.approx(two.chain.gamma[0])
    av = build_scenario("avalanche")
    assert (av.n_modes, av.nu, av.coherent[1], av.realizations) == (15, 0.5, 10.0, 300_000)
    assert av.mean_coupling == 5 * av.gamma
    q = build_scenario("quench")
    assert (q.fock_mode, q.nu, q.mean_coupling) == (5, 1.0, 0.0)


def test_overrides_take_precedence():
    sc = build_scenario("two_mode", {"seed": 4, "realizations": 10}, realizations=20, seed=None)
    assert (sc.seed, sc.realizations) == (4, 20)


def test_unknown_key_rejected():
    with pytest.raises(ValidationError):
        build_scenario("custom", {"bogus": 1})


def test_toml_config(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        'scenario = "custom"\nmethod = "moments"\n'
        "[chain]\nn_modes = 3\ngamma = 0.5\nnu = 1.0\n"
        '[initial]\ncoherent = {"1" = 0.7}\n'
        "[time]\nt_max = 2.0\nn_steps = 40\n"
    )
    sc = build_scenario(None, load_config(cfg))
    assert (sc.kind, sc.method, sc.n_modes, sc.coherent) == ("custom", "moments", 3, {1: 0.7})


def test_two_mode_run_and_rerun_is_bitwise(tmp_path, capsys):
    out1 = tmp_path / "a"
    code, _, err = run_cli(
        ["run", "--scenario", "two_mode", "--realizations", "1200", "--seed", "3", "--out", str(out1)], capsys
    )
    assert code == 0
    assert "montecarlo: 1024/1200 realizations" in err
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"moments.csv", "montecarlo.csv", "fock.csv"}
    assert manifest["seed"] == 3 and manifest["realizations"] == 1200
    body = (out1 / "moments.csv").read_text().splitlines()
    g2_2 = np.array([float(r.split(",")[4]) for r in body[1:]])
    assert g2_2[0] == pytest.approx(3.0) and g2_2[-1] == pytest.approx(1.5, abs=1e-3)

    out2 = tmp_path / "b"
    code, _, _ = run_cli(["run", "--config", str(out1 / "manifest.json"), "--out", str(out2), "--quiet"], capsys)
    assert code == 0
    for name in manifest["outputs"]:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    code, out, _ = run_cli(["compare", str(out1 / "montecarlo.csv"), str(out1 / "moments.csv")], capsys)
    assert code == 0 and json.loads(out)["passed"]


def test_quiet_suppresses_progress(tmp_path, capsys):
    code, _, err = run_cli(
        ["run", "--scenario", "two_mode", "--method", "montecarlo", "--realizations", "1100", "--quiet", "--out", str(tmp_path)],
        capsys,
    )
    assert code == 0 and err == ""


def test_compare_failure_exit_code(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("t,n_1,g2_1,g2_se_1\n0,1,1,0.01\n1,1,1.5,0.01\n")
    b.write_text("t,n_1,g2_1,g2_se_1\n0,1,1,0.01\n1,1,1.0,0.01\n")
    code, out, _ = run_cli(["compare", str(a), str(b)], capsys)
    assert code == 1 and not json.loads(out)["passed"]


def test_validation_error_record(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("method = \"moments\"\n[chain]\nn_modes = 4\nnu = 0.5\n")
    code, _, err = run_cli(["run", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    record = json.loads(err.strip().splitlines()[-1])
    assert record["error"] == "RequiresCircularZeroMean" and record["exit_code"] == 2


def test_grid_mismatch_is_validation_error(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("t,n_1,g2_1\n0,1,1\n")
    b.write_text("t,n_1,g2_1\n0.5,1,1\n")
    code, _, err = run_cli(["compare", str(a), str(b)], capsys)
    assert code == 2 and "GridMismatch" in err


def test_io_error_exit_code(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run_cli(["run", "--scenario", "two_mode", "--method", "moments", "--out", str(blocker / "x")], capsys)
    assert code == 4 and json.loads(err.strip())["exit_code"] == 4
    code, _, _ = run_cli(["compare", str(tmp_path / "missing.csv"), str(tmp_path / "missing.csv")], capsys)
    assert code == 4


def test_all_skips_unsupported_methods(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[chain]\nn_modes = 4\nnu = 0.5\n[time]\nt_max = 0.1\nn_steps = 10\n[montecarlo]\nrealizations = 50\n")
    code, _, err = run_cli(["run", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["outputs"] == ["montecarlo.csv"]
    assert any("moments: skipped" in w for w in manifest["warnings"])
    assert any("fock: skipped" in w for w in manifest["warnings"])


def test_presets_command(capsys):
    code, out, _ = run_cli(["presets"], capsys)
    assert code == 0 and set(json.loads(out)) == set(PRESETS)
