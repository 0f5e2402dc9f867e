import csv
import json

import pytest

from sclab import __version__
from sclab.cli import main, run_experiment
from sclab.config import parse_config
from sclab.errors import ConfigError

MINIMAL = """\
[grid]
n = 64
[flux]
kind = burgers
[time]
T = 0.4
n_steps = 8
"""

RIEMANN = """\
[experiment]
name = riemann
task = solve
seed = 3
[grid]
n = 64
[flux]
kind = burgers
[initial]
kind = riemann
left = 1
right = 0
[time]
T = 0.4
n_steps = 8
"""

GAUSS = """\
[experiment]
seed = 11
[grid]
n = 32
[flux]
kind = zero
[noise]
K = 1
sigma = 0.5
[initial]
kind = sine
amplitude = 0.3
[time]
T = 0.5
n_steps = 20
[mc]
eps = 0.02, 0.01
n_traj = 200
threshold = 0.05
[minimize]
shift = 0.05
delta_target = 0.0001
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def assert_rectangular(rows):
    assert len(rows) >= 2
    assert all(len(r) == len(rows[0]) for r in rows)


def test_minimal_config_defaults():
    spec = parse_config(MINIMAL, task="solve")
    assert spec.cfl == 0.45
    assert spec.scheme == "engquist_osher"
    assert spec.get("solver", "eta") == 0.0
    assert spec.get("noise", "K") == 1
    assert spec.grid().n_cells == 64


def test_cfl_out_of_range_reports_line():
    text = MINIMAL + "cfl = 1.5\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text, task="solve")
    assert (8, "cfl out of (0,1]") in exc.value.errors
    assert "line 8: cfl out of (0,1]" in str(exc.value)


def test_missing_section_is_named():
    text = MINIMAL.replace("[flux]\nkind = burgers\n", "")
    with pytest.raises(ConfigError) as exc:
        parse_config(text, task="solve")
    assert any("[flux]" in m for _, m in exc.value.errors)


def test_all_errors_collected_with_lines():
    text = "[grid]\nn = 2\ncolour = red\n[bogus]\n[time]\nT = -1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text, task="solve")
    lines = {ln for ln, _ in exc.value.errors}
    assert {2, 3, 4, 6} <= lines
    assert any("missing required section [flux]" in m for _, m in exc.value.errors)


def test_referenced_file_must_exist(tmp_path):
    text = MINIMAL + "[control]\nkind = file\nfile = nope.csv\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text, task="solve", base_dir=tmp_path)
    assert any("does not exist" in m for _, m in exc.value.errors)
    (tmp_path / "nope.csv").write_text("t,h1\n0,1\n0.4,1\n")
    spec = parse_config(text, task="solve", base_dir=tmp_path)
    assert spec.control().T == 0.4


def test_constant_control_length_checked():
    text = MINIMAL + "[noise]\nK = 2\n[control]\nkind = constant\nvalues = 1\n"
    with pytest.raises(ConfigError):
        parse_config(text, task="solve")


def test_solve_writes_snapshots_and_manifest(tmp_path):
    spec = parse_config(RIEMANN)
    res = run_experiment(spec, tmp_path / "out")
    assert res.exit_code == 0
    out = tmp_path / "out"
    snaps = sorted(out.glob("snapshot_0*.csv"))
    assert len(snaps) == 9
    for s in snaps:
        rows = read_csv(s)
        assert rows[0] == ["x1", "u"]
        assert_rectangular(rows)
        assert len(rows) == 65
    man = json.loads((out / "manifest.json").read_text())
    assert man["version"] == __version__
    assert man["seed"] == 3
    assert man["spec"]["time"]["cfl"] == 0.45
    assert set(man) == {"name", "task", "seed", "version", "exit_code", "error", "spec", "files"}
    assert {f["file"] for f in man["files"]} >= {s.name for s in snaps}


def test_mc_summary_shape(tmp_path):
    spec = parse_config(GAUSS, task="mc")
    res = run_experiment(spec, tmp_path)
    assert res.exit_code == 0
    summary = read_csv(tmp_path / "mc_summary.csv")
    assert_rectangular(summary)
    assert len(summary) == 3
    traj = read_csv(tmp_path / "mc_trajectories.csv")
    assert traj[0] == ["traj_id", "seed", "eps", "final_l1_dist", "event_flag"]
    assert len(traj) == 401


def test_rerun_is_byte_identical(tmp_path):
    for task in ("mc", "minimize", "action"):
        outs = []
        for k in range(2):
            d = tmp_path / f"{task}{k}"
            run_experiment(parse_config(GAUSS, task=task), d)
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        assert outs[0] == outs[1]


def test_seed_override_changes_mc(tmp_path):
    a = run_experiment(parse_config(GAUSS, task="mc", seed=1), tmp_path / "a")
    b = run_experiment(parse_config(GAUSS, task="mc", seed=2), tmp_path / "b")
    assert a.exit_code == b.exit_code == 0
    assert (tmp_path / "a" / "mc_trajectories.csv").read_bytes() != \
        (tmp_path / "b" / "mc_trajectories.csv").read_bytes()


def _write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.mark.parametrize("task", ["solve", "skeleton", "parabolic", "kinetic-check", "action",
                                  "minimize", "weak-probe"])
def test_main_tasks_succeed(tmp_path, task):
    text = GAUSS + "[solver]\neta = 0.01\n[weak]\neps = 0.1, 0.05\n"
    cfg = _write(tmp_path, text)
    assert main([task, "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    for p in (tmp_path / "o").glob("*.csv"):
        assert_rectangular(read_csv(p))


def test_main_cond_b(tmp_path):
    text = GAUSS + "[condb]\neps = 0, 0.01\nn_traj = 20\nM = 1\n"
    assert main(["cond-b", "--config", _write(tmp_path, text), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "cond_b.csv")
    assert rows[0][:2] == ["eps", "mean_gap"]
    assert float(rows[1][1]) == 0.0


def test_main_cond_b_needs_radius(tmp_path, capsys):
    assert main(["cond-b", "--config", _write(tmp_path, GAUSS)]) == 1
    assert "'M'" in capsys.readouterr().err


def test_main_minimize_not_converged_exit_code(tmp_path):
    text = GAUSS.replace("delta_target = 0.0001", "delta_target = 0.0001\nrounds = 1") \
        .replace("shift = 0.05", "shift = 50")
    assert main(["minimize", "--config", _write(tmp_path, text), "--out", str(tmp_path)]) == 2


def test_main_ldp_fit_exit_codes(tmp_path):
    table = tmp_path / "t.csv"
    table.write_text("eps,p_hat\n0.4,0.3\n0.2,0.1\n")
    assert main(["ldp-fit", "--table", str(table), "--action-star", "1",
                 "--out", str(tmp_path / "a")]) == 3
    table.write_text("eps,p_hat\n0.4,0.3\n0.2,0.1\n0.1,0.01\n")
    assert main(["ldp-fit", "--table", str(table), "--action-star", "1",
                 "--out", str(tmp_path / "b")]) == 0
    assert read_csv(tmp_path / "b" / "ldp_fit.csv")[0][0] == "limit"


def test_main_bad_config_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL + "cfl = 1.5\n")
    assert main(["solve", "--config", cfg]) == 1
    assert "line 8: cfl out of (0,1]" in capsys.readouterr().err


def test_main_requires_config():
    assert main(["solve"]) == 1
