import json
import os

import pytest

from chaoslab import cli, config

SMALL = """
seed = 7
[schedule]
N_list = [8, 16]
[grid]
L = 6.0
n = 512
[sde]
n_steps = 16
n_save = 4
[diagnostics]
replicas = 2
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(SMALL)
    return p


def run(args, capsys):
    code = cli.main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_defaults_are_valid_for_every_command():
    for cmd in ("simulate", "rate-sweep", "liouville-oracle", "kernel-check"):
        config.validate(config.load(), cmd)
    cfg = config.load(overrides=[{"grid": {"n": 4096}}])
    config.validate(cfg, "pde-compare")


def test_override_parsing():
    assert config.parse_override("sde.sigma=0.25") == {"sde": {"sigma": 0.25}}
    assert config.parse_override("schedule.N_list=[1,2]") == {"schedule": {"N_list": [1, 2]}}
    assert config.parse_override("kernel.family=bessel") == {"kernel": {"family": "bessel"}}
    with pytest.raises(config.ConfigError):
        config.parse_override("nonsense")


@pytest.mark.parametrize("override,field", [
    ({"schedule": {"beta": 0.6}}, "schedule.beta"),
    ({"diagnostics": {"alpha": 0.3, "delta": 0.25}}, "diagnostics.delta"),
    ({"grid": {"n": 1000}}, "grid.n"),
    ({"grid": {"n": 64}}, "grid.n"),
    ({"kernel": {"R": 5.0}}, "kernel.R"),
    ({"sde": {"sigma": -1.0}}, "sde.sigma"),
    ({"kernel": {"family": "yukawa"}}, "kernel.family"),
])
def test_cross_field_validation(override, field):
    with pytest.raises(config.ConfigError) as exc:
        config.validate(config.load(overrides=[override]), "simulate")
    assert exc.value.field == field
    assert json.loads(exc.value.as_json())["field"] == field


def test_unknown_key_rejected():
    with pytest.raises(config.ConfigError, match="unknown"):
        config.load(overrides=[{"sde": {"sigmaa": 1.0}}])


def test_hash_ignores_output_dir():
    a = config.load(overrides=[{"output_dir": "x"}])
    b = config.load(overrides=[{"output_dir": "y"}])
    c = config.load(overrides=[{"seed": 1}])
    assert config.config_hash(a) == config.config_hash(b) != config.config_hash(c)


def test_simulate_writes_headed_csvs(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["simulate", cfg_file, "--out", out], capsys)
    assert code == 0
    for name in ("records.csv", "summary.csv", "rates.csv", "predicted.csv"):
        first = (out / name).read_text().splitlines()[0]
        assert first.startswith("# chaoslab ") and "config_hash=" in first and "command=simulate" in first
    lines = (out / "records.csv").read_text().splitlines()
    assert lines[1] == "replica,N,t,l2_moll,l2_moll_dx,modulated_energy,coupling_max,lln_defect"
    assert len(lines) == 2 + 2 * 2 * 5


def test_simulate_is_thread_invariant(cfg_file, tmp_path, capsys):
    blobs = []
    for th in (1, 3):
        out = tmp_path / f"t{th}"
        assert run(["simulate", cfg_file, "--out", out, "--threads", th], capsys)[0] == 0
        blobs.append({f: (out / f).read_bytes() for f in sorted(os.listdir(out))})
    assert blobs[0] == blobs[1]


def test_env_threads_fallback(cfg_file, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CHAOSLAB_THREADS", "2")
    assert run(["simulate", cfg_file, "--out", tmp_path / "e"], capsys)[0] == 0
    monkeypatch.setenv("CHAOSLAB_THREADS", "0")
    code, _, err = run(["simulate", cfg_file, "--out", tmp_path / "e2"], capsys)
    assert code == 2 and json.loads(err)["field"] == "threads"


def test_validation_failure_exit_code_and_no_output(cfg_file, tmp_path, capsys):
    out = tmp_path / "never"
    code, _, err = run(["rate-sweep", cfg_file, "--out", out], capsys)
    assert code == 2
    assert json.loads(err) == {"error": "validation", "field": "schedule.N_list",
                               "message": "rate sweeps need at least 4 N values"}
    assert not out.exists()


def test_io_failure_exit_code(cfg_file, tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["simulate", cfg_file, "--out", blocker / "sub"], capsys)[0] == 4
    assert run(["simulate", tmp_path / "missing.toml"], capsys)[0] == 4


def test_numerical_failure_exit_code(cfg_file, tmp_path, capsys):
    code, _, err = run(["kernel-check", cfg_file, "--out", tmp_path / "k", "--set",
                        "kernel_check.eps_list=[0.5,0.2,0.1,0.01]"], capsys)
    assert code == 3 and "under-resolved" in err


def test_kernel_check_prints_table(cfg_file, tmp_path, capsys):
    code, out, _ = run(["kernel-check", cfg_file, "--out", tmp_path / "k", "--set", "kernel.family=bessel",
                        "--set", "grid.n=4096", "--set",
                        "kernel_check.eps_list=[0.125,0.0625,0.03125,0.015625,0.0078125]"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("eps,W_L2,W_H2,V_H2,k_Linf,factorization_residual")
    fit = [ln for ln in lines if ln.startswith("W,")][0].split(",")
    assert abs(float(fit[1]) - 0.75) < 0.1 and fit[-1] == "1"
    assert float(lines[1].split(",")[-1]) < 1e-6
    assert (tmp_path / "k" / "kernel_fit.csv").exists()


def test_liouville_and_pde_compare_commands(cfg_file, tmp_path, capsys):
    code, out, _ = run(["liouville-oracle", cfg_file, "--out", tmp_path / "l", "--set", "grid.n=128",
                        "--set", "diagnostics.replicas=8", "--set", "sde.T=0.1"], capsys)
    assert code == 0 and "holds" in out
    assert (tmp_path / "l" / "liouville.csv").read_text().splitlines()[1].startswith("t,H2,")
    code, _, _ = run(["pde-compare", cfg_file, "--out", tmp_path / "p", "--set", "grid.n=512", "--set", "sde.T=0.2",
                      "--set", "pde_compare.eps_list=[0.4,0.2,0.1]"], capsys)
    assert code == 0
    rows = (tmp_path / "p" / "pde_compare.csv").read_text().splitlines()[2:]
    l1 = [float(r.split(",")[1]) for r in rows]
    assert l1 == sorted(l1, reverse=True)


def test_seed_flag_changes_results(cfg_file, tmp_path, capsys):
    run(["simulate", cfg_file, "--out", tmp_path / "a"], capsys)
    run(["simulate", cfg_file, "--out", tmp_path / "b", "--seed", "8"], capsys)
    a = (tmp_path / "a" / "records.csv").read_text().splitlines()[2:]
    b = (tmp_path / "b" / "records.csv").read_text().splitlines()[2:]
    assert a != b
