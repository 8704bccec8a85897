import subprocess
import sys

import numpy as np
import pytest

from sgfluid.cli import main

SMALL = """\
[lattice]
k_max = 4
[sim]
dt = 5e-3
t_end = 2
record_every = 20
[ensemble]
n_paths = 16
[check]
theta_samples = 200
"""


@pytest.fixture
def small(tmp_path):
    def make(extra="", name="small.ini"):
        p = tmp_path / name
        p.write_text(SMALL + extra)
        return p
    return make


def run(tmp_path, *argv, out="out"):
    d = tmp_path / out
    code = main([*argv, "--out", str(d), "--threads", "1"] if "--threads" not in argv
                else [*argv, "--out", str(d)])
    return code, d


def read_csv(path):
    lines = path.read_text().splitlines()
    meta = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    return meta, body[0].split(","), np.array([[float(x) for x in l.split(",")] for l in body[1:]])


def test_version_via_module():
    res = subprocess.run([sys.executable, "-m", "sgfluid", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("sgfluid ")


def test_malformed_and_unknown_keys_exit_1(tmp_path, small):
    bad = tmp_path / "bad.ini"
    bad.write_text("[lattice\nk_max = 4\n")
    assert run(tmp_path, "check", "--config", str(bad))[0] == 1
    assert run(tmp_path, "check", "--config", str(small("[sim]\nbogus = 1\n", "u.ini")))[0] == 1
    assert run(tmp_path, "check", "--config", str(small("[physics]\nnu = -1\n", "n.ini")))[0] == 1
    assert run(tmp_path, "check", "--config", str(tmp_path / "missing.ini"))[0] == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_check_reports_infeasible_viscosity(tmp_path, small, capsys):
    code, d = run(tmp_path, "check", "--config", str(small("[physics]\nnu = 0\n")))
    assert code == 2
    assert (d / "check.txt").exists() and (d / "config.ini").exists()
    code, _ = run(tmp_path, "check", "--config", str(small()), out="ok")
    assert code == 0


def test_experiments_are_gated(tmp_path, small):
    cfg = small("[physics]\nnu = 0.05\n")
    assert run(tmp_path, "couple", "--config", str(cfg))[0] == 2
    assert not (tmp_path / "out" / "coupling.csv").exists()


def test_simulate_writes_trajectory(tmp_path, small):
    code, d = run(tmp_path, "simulate", "--config", str(small("[coupling]\nx0 = random 3 1.0\n")))
    assert code == 0
    meta, cols, rows = read_csv(d / "trajectory.csv")
    assert "# schema: trajectory/1" in meta
    assert cols[:2] == ["t", "l2sq"] and rows.shape == (21, 8)
    assert rows[-1, 0] == pytest.approx(2.0)


def test_terminal_only_record(tmp_path, small):
    cfg = small().read_text().replace("record_every = 20", "record_every = inf")
    p = tmp_path / "inf.ini"
    p.write_text(cfg)
    code, d = run(tmp_path, "simulate", "--config", str(p), out="inf")
    assert code == 0
    assert read_csv(d / "trajectory.csv")[2].shape == (1, 8)


def test_couple_identical_starts(tmp_path, small):
    cfg = small("[coupling]\nx0 = random 7 1.0\nx0_tilde = random 7 1.0\n")
    code, d = run(tmp_path, "couple", "--config", str(cfg))
    assert code == 0
    _, cols, rows = read_csv(d / "coupling.csv")
    assert np.all(rows[:, cols.index("r_vsq")] == 0)
    assert "verdict = identical" in (d / "coupling_report.txt").read_text()


def test_negative_control(tmp_path, small):
    cfg = small().read_text().replace("t_end = 2", "t_end = 10")
    p = tmp_path / "long.ini"
    p.write_text(cfg)
    code, d = run(tmp_path, "couple", "--negative-control", "--config", str(p))
    report = (d / "coupling_report.txt").read_text()
    assert "verdict = no-decay" in report
    assert code == 0


def test_spectrum(tmp_path, small):
    code, d = run(tmp_path, "spectrum", "--config", str(small()))
    assert code == 0
    meta, cols, rows = read_csv(d / "spectrum.csv")
    assert cols == ["k1", "k2", "ksq", "helm", "lambda", "wmult"]
    assert rows.shape == (80, 6)
    assert f"# K^2 = {1057 / 1089!r}" in meta
    np.testing.assert_allclose(rows[:, 4], 1 + rows[:, 3] * rows[:, 2])


def test_moment_only(tmp_path, small):
    code, d = run(tmp_path, "mix", "--moment-only", "--config", str(small()))
    assert code == 0
    assert "moment_ok = True" in (d / "moment.txt").read_text()


@pytest.mark.filterwarnings("ignore::sgfluid.errors.InsufficientBurnin")
def test_outputs_byte_identical_across_runs_and_threads(tmp_path, small):
    cfg = str(small())
    outs = []
    for i, threads in enumerate(("1", "1", "3")):
        d = tmp_path / f"run{i}"
        for cmd in (["simulate"], ["couple"], ["mix"]):
            assert main([*cmd, "--config", cfg, "--out", str(d), "--threads", threads]) in (0, 2)
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert set(outs[0]) >= {"trajectory.csv", "coupling.csv", "coupling_report.txt", "mixing.csv",
                            "mixing_report.txt", "config.ini"}
    assert outs[0] == outs[1] == outs[2]


def test_output_dir_from_environment(tmp_path, small, monkeypatch):
    monkeypatch.setenv("SGFLUID_OUT", str(tmp_path / "env"))
    assert main(["spectrum", "--config", str(small())]) == 0
    assert (tmp_path / "env" / "spectrum.csv").exists()
