import io
import math
import sys

import numpy as np

from openend.cli import main, replay_phases, Session, build_parser
from openend.core import WeightFunction, invert_to_norm
from openend.detectors import KINDS, first_rejections, trajectories
from openend.experiments import ChangeSpec, DataModel, generate
from openend.functionals import prefix_sums, scores_lm
from openend.limits import LimitSpec, MCSettings, critical_value
from openend.lrv import LRVConfig, lrv_estimate

MC_FLAGS = ["--runs", "400", "--grid", "400", "--seed", "7"]
MC = MCSettings(400, 400, 7)


def run(argv, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    out = io.StringIO()
    code = main(argv, out=out)
    return code, out.getvalue()


def write_csv(path, rows, header=None):
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return str(path)


def offline_lines(rows, m, horizon, functional="mean", gamma=0.0):
    """Expected monitor output computed with the batch library routines."""
    scores = scores_lm(rows[:, :-1], rows[:, -1]) if functional == "lm" else rows
    norm = invert_to_norm(lrv_estimate(scores[:m], LRVConfig(math.log10(m))))
    tr = trajectories(prefix_sums(scores), m, horizon, norm)
    w = WeightFunction(gamma)
    crit = {k: critical_value(LimitSpec(k, gamma, scores.shape[1]), 0.05, MC) for k in KINDS}
    lines = []
    for k in range(1, horizon + 1):
        parts = [str(k)]
        for kind in KINDS:
            raw = tr[kind][k - 1]
            weighted = w(k / m) * raw
            parts += [f"{raw:.6g}", f"{weighted:.6g}", "1" if weighted > crit[kind] else "0"]
        lines.append(",".join(parts))
    return lines


def test_monitor_matches_library_and_signals_rejection(tmp_path, capsys):
    rows = generate(DataModel("M1"), 200, ChangeSpec(1, 3.0), 100, 12)
    path = write_csv(tmp_path / "m1.csv", rows)
    code, out = run(["monitor", path, "--m", "100", *MC_FLAGS])
    assert code == 2
    lines = out.splitlines()
    assert lines[0].startswith("k,E,E_weighted,E_rejected,Q,")
    assert lines[1:] == offline_lines(rows, 100, 200)
    assert "rejection: E at k=" in capsys.readouterr().err


def test_monitor_regression_from_stdin(monkeypatch):
    rows = generate(DataModel("LM1"), 80, None, 60, 3)
    text = "p1,p2,y\n" + "\n".join(",".join(repr(float(v)) for v in r) for r in rows) + "\n"
    code, out = run(["monitor", "--functional", "lm", "--m", "60", "--header", *MC_FLAGS],
                    stdin=text, monkeypatch=monkeypatch)
    assert code in (0, 2)
    assert out.splitlines()[1:] == offline_lines(rows, 60, 80, "lm")


def test_monitor_no_rejection_exit_zero(tmp_path, capsys):
    x = np.sin(np.arange(150) * 0.7)[:, None]
    path = write_csv(tmp_path / "s.csv", x)
    code, out = run(["monitor", path, "--m", "100", "--detectors", "E", "--alpha", "0.01", *MC_FLAGS])
    assert code == 0
    assert len(out.splitlines()) == 51
    assert "no rejection after k=50" in capsys.readouterr().err


def test_monitor_constant_training_is_degenerate(tmp_path, capsys):
    path = write_csv(tmp_path / "c.csv", np.ones((150, 1)))
    code, out = run(["monitor", path, "--m", "100", *MC_FLAGS])
    assert code == 1 and out == ""
    assert "degenerate long-run variance" in capsys.readouterr().err


def test_malformed_row_reports_line(monkeypatch, capsys):
    code, _ = run(["monitor", "--m", "3"], stdin="1.0\n2.0\n1.0,abc\n", monkeypatch=monkeypatch)
    assert code == 1
    err = capsys.readouterr().err
    assert "line 3" in err and "'abc'" in err


def test_ragged_rows_rejected(monkeypatch, capsys):
    code, _ = run(["monitor", "--m", "3"], stdin="1,2\n3\n", monkeypatch=monkeypatch)
    assert code == 1
    assert "line 2: expected 2 columns" in capsys.readouterr().err


def test_too_few_rows(monkeypatch, capsys):
    code, _ = run(["monitor", "--m", "5"], stdin="1\n2\n", monkeypatch=monkeypatch)
    assert code == 1
    assert "at least m=5" in capsys.readouterr().err


def test_missing_m_and_bad_flags(capsys):
    assert run(["monitor", "-"])[0] == 1
    assert run(["monitor", "--m", "10", "--gamma", "0.7"])[0] == 1
    assert run(["monitor", "--m", "abc"])[0] == 1
    assert run(["nonsense"])[0] == 1


def test_closed_end_stops_at_horizon(tmp_path):
    x = np.random.default_rng(1).standard_normal((100, 1))
    path = write_csv(tmp_path / "x.csv", x)
    code, out = run(["monitor", path, "--m", "40", "--T", "0.5", "--detectors", "Q", *MC_FLAGS])
    assert len(out.splitlines()) == 1 + 20


def test_stop_on_reject(tmp_path):
    rows = generate(DataModel("M1"), 200, ChangeSpec(1, 4.0), 100, 2)
    path = write_csv(tmp_path / "x.csv", rows)
    code, out = run(["monitor", path, "--m", "100", "--stop-on-reject", *MC_FLAGS])
    assert code == 2
    last = out.splitlines()[-1].split(",")
    assert last[3] == last[6] == last[9] == "1"
    assert len(out.splitlines()) < 200


def test_log_returns_flag(tmp_path):
    prices = np.exp(np.cumsum(np.random.default_rng(4).normal(0, 0.01, 131)))[:, None]
    p_path = write_csv(tmp_path / "p.csv", prices)
    r_path = write_csv(tmp_path / "r.csv", np.diff(np.log(prices), axis=0))
    _, a = run(["monitor", p_path, "--m", "30", "--log-returns", *MC_FLAGS])
    _, b = run(["monitor", r_path, "--m", "30", *MC_FLAGS])
    assert a == b and len(a.splitlines()) == 101


def test_config_file_with_override(tmp_path):
    x = np.random.default_rng(5).standard_normal((90, 1))
    path = write_csv(tmp_path / "x.csv", x)
    cfg = tmp_path / "session.cfg"
    cfg.write_text("# session\nm = 30\ndetectors=E,Q\nt-lower=0.1\nruns=400\ngrid=400\nseed=7\n")
    _, a = run(["monitor", path, "--config", str(cfg)])
    _, b = run(["monitor", path, "--m", "30", "--detectors", "E,Q", "--t-lower", "0.1", *MC_FLAGS])
    assert a == b
    _, c = run(["monitor", path, "--config", str(cfg), "--m", "40"])
    assert len(c.splitlines()) == 1 + 50


def test_config_file_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("m=30\ncolour=blue\n")
    assert run(["monitor", "--config", str(cfg)])[0] == 1
    assert "unknown option 'colour'" in capsys.readouterr().err
    cfg.write_text("m=30\nheader=maybe\n")
    assert run(["monitor", "--config", str(cfg)])[0] == 1


def test_quantiles_exact_marker_and_cache(tmp_path):
    cache = str(tmp_path / "q.json")
    argv = ["quantiles", "--kinds", "E,Q", "--gammas", "0", "--alphas", "0.05", "--cache", cache,
            "--runs", "300", "--grid", "300"]
    code, out = run(argv)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "kind,gamma,p,T,alpha,quantile,method"
    assert lines[1] == "E,0,1,inf,0.05,2.4977,exact"
    assert lines[2].startswith("Q,0,1,inf,0.05,") and lines[2].endswith(",mc")
    assert run(argv)[1] == out


def test_quantiles_closed_end():
    code, out = run(["quantiles", "--kinds", "E", "--gammas", "0", "--alphas", "0.05", "--T", "4"])
    # exact value 2.23397; the table prints 2.2339
    assert out.splitlines()[1] == "E,0,1,4,0.05,2.2340,exact"


def test_experiment_plan(tmp_path):
    plan = tmp_path / "size.plan"
    plan.write_text("model=M1\nm=40\nhorizon=100\nreplications=30\nseed=4\nruns=300\ngrid=300\n")
    code, out = run(["experiment", str(plan)])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "model,m,gamma,detector,delta,k_star,rejections,replications,power"
    assert len(lines) == 4 and lines[1].startswith("M1,40,0.0,E,0.0,,")
    # fixed seed: byte-identical output file
    dest1, dest2 = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["experiment", str(plan), "--out", str(dest1)])
    run(["experiment", str(plan), "--out", str(dest2)])
    assert dest1.read_bytes() == dest2.read_bytes() == out.encode()
    # zero shift reproduces the size counts
    power_plan = tmp_path / "power.plan"
    power_plan.write_text(plan.read_text() + "deltas=0\nk_stars=5\n")
    _, pout = run(["experiment", str(power_plan)])
    for s_line, p_line in zip(lines[1:], pout.splitlines()[1:]):
        s, p = s_line.split(","), p_line.split(",")
        assert s[6:] == p[6:] and p[5] == "5"


def test_experiment_plan_errors(tmp_path, capsys):
    plan = tmp_path / "bad.plan"
    plan.write_text("model=M9\n")
    assert run(["experiment", str(plan)])[0] == 1
    plan.write_text("model=M1\nspeed=fast\n")
    assert run(["experiment", str(plan)])[0] == 1
    assert "unknown plan keys: speed" in capsys.readouterr().err
    plan.write_text("model=M1\ndeltas=0.5\n")
    assert run(["experiment", str(plan)])[0] == 1
    assert run(["experiment", str(tmp_path / "missing.plan")])[0] == 1


def two_regime_rows(seed=11):
    rows = generate(DataModel("LM1"), 700, ChangeSpec(300, 3.0), 100, seed)
    return rows


def test_replay_places_boundary_at_break(tmp_path):
    rows = two_regime_rows()
    path = write_csv(tmp_path / "lm.csv", rows)
    code, out = run(["replay", path, "--functional", "lm", "--m", "100", *MC_FLAGS])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "phase,train_start,train_end,detector,k,row,status"
    first = [line.split(",") for line in lines[1:4]]
    assert {f[0] for f in first} == {"1"}
    break_row = 400  # X_{m+k*}, 1-based
    for f in first:
        assert f[6] == "rejected"
        assert break_row <= int(f[5]) <= break_row + 5 * 100
    restart = max(int(f[5]) for f in first)
    second = [line.split(",") for line in lines[4:7]]
    assert second[0][1] == str(restart) and second[0][2] == str(restart + 99)


def test_replay_matches_offline_recomputation(tmp_path):
    rows = two_regime_rows(5)
    args = build_parser()[0].parse_args(["replay", "--functional", "lm", "--m", "100", *MC_FLAGS])
    phases = replay_phases(rows, Session.from_args(args))
    scores = scores_lm(rows[:, :2], rows[:, 2])
    crit = {k: critical_value(LimitSpec(k, 0.0, 2), 0.05, MC) for k in KINDS}
    start = 0
    for ph in phases:
        assert ph.train_start == start
        norm = invert_to_norm(lrv_estimate(scores[start : start + 100], LRVConfig(2.0)))
        horizon = len(rows) - start - 100
        want = first_rejections(prefix_sums(scores[start:]), 100, horizon, norm, WeightFunction(), crit)
        assert ph.ks == want
        hit = [start + 100 + k - 1 for k in want.values() if k is not None]
        if len(hit) < 3:
            break
        start = max(hit)


def test_replay_without_change_single_phase(tmp_path):
    x = np.random.default_rng(0).standard_normal((300, 1))
    path = write_csv(tmp_path / "x.csv", x)
    code, out = run(["replay", path, "--m", "100", "--alpha", "0.01", *MC_FLAGS])
    lines = out.splitlines()
    assert code == 0 and len(lines) == 4
    assert all(line.endswith(",,did not stop") for line in lines[1:])


def test_replay_short_data(tmp_path, capsys):
    path = write_csv(tmp_path / "x.csv", np.arange(10.0)[:, None])
    assert run(["replay", path, "--m", "20"])[0] == 1
    assert "phase 1" in capsys.readouterr().err


def test_replay_closed_end_restarts_after_window():
    x = np.random.default_rng(3).standard_normal((400, 1))
    args = build_parser()[0].parse_args(["replay", "--m", "50", "--T", "1", "--alpha", "0.01", *MC_FLAGS])
    phases = replay_phases(x, Session.from_args(args))
    assert len(phases) >= 2
    for a, b in zip(phases, phases[1:]):
        hits = [r for r in a.rejections.values() if r is not None]
        assert b.train_start == (max(hits) if hits else a.train_start + 100)


def test_module_entry_point():
    import subprocess

    res = subprocess.run([sys.executable, "-m", "openend", "quantiles", "--kinds", "E", "--gammas", "0",
                          "--alphas", "0.1"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.splitlines()[1].endswith(",exact")
