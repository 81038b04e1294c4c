import csv

import pytest

from flexqueue.cli import main
from flexqueue.reporting import read_csv

BASE = """\
# figure base instance
lambda = 5
mu_low = 3
mu_high = 5
c = 6
R = 4
beta = 0.5
holding.variant = power
holding.K = 1
holding.m = 2
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(BASE)
    return path


def test_solve_prints_verdict(cfg_file, capsys):
    assert main(["solve", "--config", str(cfg_file)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1] in ("flex=valueless Bs>=Bd+1", "flex=active Bs<=Bd")
    assert lines[0].startswith("Bs=")


def test_solve_writes_values_with_metadata(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg_file), "--out", str(out)]) == 0
    meta, rows = read_csv(out / "values.csv")
    assert list(rows[0]) == ["x", "i", "value"]
    assert meta["lambda"] == "5" and meta["command"] == "solve"
    assert "result.Bs" in meta
    assert len(rows) % 2 == 0


def test_missing_key_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(BASE.replace("beta = 0.5\n", ""))
    assert main(["solve", "--config", str(path)]) == 2
    assert "key 'beta'" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(BASE + "gamma = 3\n")
    assert main(["solve", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 11" in err and "key 'gamma'" in err


def test_bad_value_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(BASE.replace("c = 6", "c = six"))
    assert main(["solve", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 5" in err and "key 'c'" in err


def test_duplicate_key_rejected(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(BASE + "R = 5\n")
    assert main(["solve", "--config", str(path)]) == 2
    assert "duplicate" in capsys.readouterr().err


def test_invalid_model_exit_2(cfg_file, capsys):
    assert main(["solve", "--config", str(cfg_file), "--set", "mu_high=2"]) == 2


def test_overrides_apply_after_file(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg_file), "--set", "R=0.25", "--out", str(out)]) == 0
    meta, _ = read_csv(out / "values.csv")
    assert meta["R"] == "0.25"
    assert "Bd=-1" in capsys.readouterr().out


def test_truncation_failure_exit_3(cfg_file, capsys):
    args = ["solve", "--config", str(cfg_file), "--set", "holding.m=1", "--set", "R=50"]
    assert main(args) == 3
    assert "TruncationTooTight" in capsys.readouterr().err


def test_simulate_deterministic(cfg_file, capsys):
    args = ["simulate", "--config", str(cfg_file), "--seed", "7", "--set", "sim.replications=2000"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert first.splitlines()[1] == "mean,half_width,reps"


def test_simulate_trace(cfg_file, tmp_path, capsys):
    out = tmp_path / "sim"
    args = ["simulate", "--config", str(cfg_file), "--out", str(out), "--set", "sim.replications=200",
            "--set", "sim.trace_T=5", "--set", "sim.b_service=1", "--set", "sim.b_admission=3"]
    assert main(args) == 0
    with open(out / "trace.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "event", "x", "action_service", "action_admit"]


def test_sweep_sorted_output(cfg_file, tmp_path, capsys):
    out = tmp_path / "sw"
    args = ["sweep", "--config", str(cfg_file), "--out", str(out), "--set", "sweep.axis=R",
            "--set", "sweep.values=3,1,2"]
    assert main(args) == 0
    _, rows = read_csv(out / "sweep.csv")
    assert [float(r["R"]) for r in rows] == [1.0, 2.0, 3.0]


@pytest.fixture(scope="module")
def reproduced(tmp_path_factory):
    outs = [tmp_path_factory.mktemp(f"rep{k}") for k in range(2)]
    codes = [main(["reproduce-paper", "--out", str(o)]) for o in outs]
    return codes, outs


def test_reproduce_exit_zero(reproduced):
    codes, _ = reproduced
    assert codes == [0, 0]


def test_reproduce_table_row(reproduced):
    _, (out, _) = reproduced
    meta, rows = read_csv(out / "table1_lambda2.csv")
    assert list(rows[0]) == ["delta_over_mul", "Bs", "Bd", "Bd_hat", "rel_flex"]
    row = next(r for r in rows if float(r["delta_over_mul"]) == 0.8)
    assert (row["Bs"], row["Bd"], row["Bd_hat"]) == ("3", "3", "2")
    assert float(row["rel_flex"]) == pytest.approx(0.0028, abs=0.002)
    assert meta["command"] == "reproduce-paper"


def test_reproduce_files_byte_stable(reproduced):
    _, (a, b) = reproduced
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert {"figure1.csv", "figure2.csv", "table1_lambda2.csv", "table1_lambda20.csv", "summary.txt"} <= set(names)
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_reproduce_metadata_header(reproduced):
    _, (out, _) = reproduced
    text = (out / "figure1.csv").read_text().splitlines()
    assert text[0].startswith("# ")
    meta, rows = read_csv(out / "figure1.csv")
    assert meta["base.lambda"] == "5"
    assert len(rows) == 40


def test_reproduce_threshold_mismatch_exit_4(tmp_path, capsys):
    assert main(["reproduce-paper", "--set", "reproduce.horizon=1"]) == 4
    assert "MISMATCH" in capsys.readouterr().out
