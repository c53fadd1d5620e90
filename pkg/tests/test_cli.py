import csv
import subprocess
import sys

import numpy as np
import pytest

from basinflow import cli, grid, output
from basinflow.config import ConfigError, parse_config

SMALL = ["--set", "grid.nx=9", "--set", "grid.ny=9"]
FAST = SMALL + ["--set", "classifier.T_max=30", "--set", "stepper.dt=0.01", "--set", "threshold.plateau_tol=1e-3"]


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# configuration


def test_defaults_and_overrides():
    cfg = parse_config(preset="example2", sets=["grid.nx=12", "stepper.dt=1e-3", "threshold.tol_s=1e-5"])
    assert cfg.domain().shape == (12, 32)
    assert cfg.domain().Lx == 3.0
    assert cfg.stepper().dt == 1e-3
    assert cfg.threshold().tol_s == 1e-5
    assert cfg.spec().name == "example2"


def test_yaml_file_nested_and_dotted(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("problem:\n  preset: cubic\ngrid.nx: 10\nclassifier:\n  T_max: 5\nseed: 7\n")
    cfg = parse_config(path)
    assert cfg.spec().name == "cubic"
    assert cfg.domain().nx == 10
    assert cfg.classifier().T_max == 5.0
    assert cfg.seed == 7
    # command-line values win over the file
    assert parse_config(path, sets=["grid.nx=11"]).domain().nx == 11


@pytest.mark.parametrize(
    "sets,match",
    [
        (["grid.mx=3"], "unknown configuration key"),
        (["grid.nx=abc"], "grid.nx"),
        (["grid.nx=2"], "grid"),
        (["problem.q=-1"], "problem"),
        (["problem.preset=example1", "problem.tau=0.9", "problem.xi=1.7"], "problem"),
        (["problem.preset=nope"], "unknown preset"),
        (["problem.preset=cubic", "problem.p=5"], "not a parameter"),
        (["stepper.solver_tol=0.1"], "stepper"),
        (["init.mode=ring"], None),
        (["noequals"], "KEY=VALUE"),
    ],
)
def test_config_errors(sets, match):
    with pytest.raises(ConfigError, match=match):
        cfg = parse_config(sets=sets)
        cfg.initial_direction()


def test_random_direction_is_seeded():
    a = parse_config(sets=["init.mode=random"] + SMALL[1::2], seed=3).initial_direction()
    b = parse_config(sets=["init.mode=random"] + SMALL[1::2], seed=3).initial_direction()
    c = parse_config(sets=["init.mode=random"] + SMALL[1::2], seed=4).initial_direction()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_kind_overrides_build_violators():
    cfg = parse_config(sets=["problem.g_kind=constant", "problem.q=-1"])
    assert cfg.spec().g.kind == "constant" and cfg.spec().g.q == -1.0
    cfg = parse_config(sets=["problem.f_kind=linear", "problem.p=1", "problem.gamma=0.5"])
    assert cfg.spec().f.kind == "linear"


# commands and exit codes


def test_config_error_exit_code(tmp_path, capsys):
    code, out = run(tmp_path, "simulate", "--set", "grid.nx=abc")
    assert code == cli.EXIT_CONFIG
    assert "grid.nx" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_verify_conditions_pass_and_fail(tmp_path):
    code, out = run(tmp_path, "verify-conditions", "--preset", "example2")
    assert code == cli.EXIT_OK
    rows = read_csv(out / "conditions.csv")
    assert rows[0] == ["condition", "verdict", "value", "witness", "detail"]
    assert all(r[1] == "pass" for r in rows[1:])
    code, out = run(tmp_path, "verify-conditions", "--set", "problem.g_kind=constant", "--set", "problem.q=-1",
                    name="viol")
    assert code == cli.EXIT_METHOD
    rows = {r[0]: r for r in read_csv(out / "conditions.csv")[1:]}
    assert rows["H"][1] == "fail" and rows["H"][3]
    man = output.read_manifest(out / output.MANIFEST_NAME)
    assert man["exit_code"] == "2" and "H" in man["error"]


def test_simulate_outputs(tmp_path):
    code, out = run(tmp_path, "simulate", "--preset", "heat", *SMALL, "--set", "simulate.t_end=0.01",
                    "--set", "simulate.snapshot_stride=5", "--set", "stepper.dt=1e-3")
    assert code == 0
    rows = read_csv(out / "trace.csv")
    assert rows[0] == ["t", "l2", "h1", "energy", "ut_l2", "z", "lyap_res"]
    assert float(rows[-1][0]) == pytest.approx(0.01)
    u, d = output.read_field(out / "final.txt")
    assert d.shape == (9, 9)
    e1 = grid.eigenmode(d)
    u0 = e1 / grid.norm_h1(e1, d)
    np.testing.assert_allclose(u, u0 / (1 + 1e-3 * grid.eigenvalue(d)) ** 10, rtol=1e-10)
    assert (out / "snapshot_0002.txt").exists()


def test_classify_with_certificate(tmp_path):
    code, out = run(tmp_path, "classify", "--preset", "cubic", "--set", "grid.nx=16", "--set", "grid.ny=16",
                    "--set", "init.scale=50", "--set", "init.mode=e1", "--set", "classifier.certificate=true")
    assert code == 0
    header, row = read_csv(out / "classification.csv")
    rec = dict(zip(header, row))
    assert rec["verdict"] == "BlowUp"
    assert rec["certificate"] == "True"


def test_threshold_heat_is_a_method_error(tmp_path):
    code, out = run(tmp_path, "threshold", "--preset", "heat", *SMALL, "--set", "classifier.T_max=5")
    assert code == cli.EXIT_METHOD
    man = output.read_manifest(out / output.MANIFEST_NAME)
    assert "no upper bracket" in man["error"]


def test_oracle_check(tmp_path):
    code, out = run(tmp_path, "oracle-check", "--preset", "example2", *SMALL, "--set", "init.scale=0.1",
                    "--set", "oracle.t_end=0.05")
    assert code == 0
    rows = read_csv(out / "oracle_check.csv")[1:]
    assert max(float(r[3]) for r in rows) <= 1e-4


def test_manifest_is_complete(tmp_path):
    code, out = run(tmp_path, "verify-conditions", "--preset", "example1")
    man = output.read_manifest(out / output.MANIFEST_NAME)
    for key in ("command", "version", "exit_code", "error", "wall_clock_s", "config.seed", "config.problem.preset"):
        assert key in man
    assert man["config.problem.preset"] == "example1"
    for p in out.iterdir():
        if p.name != output.MANIFEST_NAME:
            assert man[f"file.{p.name}.sha256"] == output.sha256(p)


def test_steady_small_and_deterministic(tmp_path):
    code_a, a = run(tmp_path, "steady", "--preset", "example2", *FAST, "--seed", "1", name="a")
    code_b, b = run(tmp_path, "steady", "--preset", "example2", *FAST, "--seed", "1", name="b")
    assert code_a == code_b == 0
    rec = dict(zip(*read_csv(a / "steady_summary.csv")))
    assert float(rec["residual_l2"]) <= 1e-10
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert {"threshold.csv", "bracket_history.csv", "probes.csv", "steady_state.csv"} <= set(csvs)
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert (a / "steady_state.txt").read_bytes() == (b / "steady_state.txt").read_bytes()


def test_field_roundtrip(tmp_path):
    d = grid.RectDomain(2.0, 1.0, 5, 4)
    u = np.random.default_rng(0).standard_normal(d.shape)
    output.write_field(tmp_path / "u.txt", u, d)
    v, d2 = output.read_field(tmp_path / "u.txt")
    assert d2 == d
    np.testing.assert_array_equal(u, v)


def test_console_entry_points(tmp_path):
    for cmd in (["basinflow"], [sys.executable, "-m", "basinflow"]):
        proc = subprocess.run([*cmd, "verify-conditions", "--preset", "example2", "--out", str(tmp_path / "ep")],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "NEWEQ1" in proc.stdout
    proc = subprocess.run(["basinflow", "bogus"], capture_output=True, text=True)
    assert proc.returncode != 0
