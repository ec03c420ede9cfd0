"""Experiment specs, the run/sweep pipeline, and the command line."""

import io
import json
import subprocess
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mdpbandit.bandit import RunLog
from mdpbandit.cli import main
from mdpbandit.experiment import (
    ExperimentSpec,
    load_spec,
    nominal_profiles,
    resolve_environment,
    run_spec,
    save_spec,
    sweep_spec,
)
from mdpbandit.gridworld import permute_actions
from mdpbandit.mdp import ExpertPolicy, FiniteMdp, save_mdp, save_policy
from mdpbandit.regret import log_linear_fit

from test_mdp import det_policy, make_mdp

# tiny 1x2 gridworld; the sticky trap keeps the induced chain aperiodic
# (a plain "S." strip would be a deterministic 2-cycle), R_bar = 0.002/1.02
STRIP = "ST\n"


def strip_layout(tmp_path):
    p = tmp_path / "strip.grid"
    p.write_text(STRIP)
    return p


def tiny_spec(tmp_path, **kw):
    defaults = dict(label="tiny", t0=4, c=0.1, iterations=30,
                    seeds=[0, 1], out=str(tmp_path / "out"),
                    layout=str(strip_layout(tmp_path)))
    defaults.update(kw)
    return ExperimentSpec(**defaults)


def identity_mdp_files(tmp_path):
    """A non-ergodic two-state environment on disk (self-loops only)."""
    mdp = make_mdp(np.eye(2)[:, None, :], np.zeros((2, 1, 2)))
    save_mdp(mdp, tmp_path / "m.json")
    save_policy(det_policy([0, 0], 1), tmp_path / "p.json")
    return tmp_path / "m.json", tmp_path / "p.json"


# ---------------------------------------------------------------------------
# specs


def test_spec_round_trip(tmp_path):
    spec = tiny_spec(tmp_path, events=[{"iteration": 10,
                                        "permutation": [1, 0, 2, 3]}])
    save_spec(spec, tmp_path / "spec.json")
    back = load_spec(tmp_path / "spec.json")
    assert back == spec


def test_load_spec_resolves_relative_paths(tmp_path):
    strip_layout(tmp_path)
    doc = {"label": "rel", "t0": 4, "c": 0.1, "iterations": 5,
           "seeds": [0], "out": "results", "layout": "strip.grid"}
    (tmp_path / "spec.json").write_text(json.dumps(doc))
    spec = load_spec(tmp_path / "spec.json")
    assert spec.layout == str(tmp_path / "strip.grid")
    assert spec.out == str(tmp_path / "results")


def test_load_spec_rejects_malformed_documents(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_spec(bad)

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"label": "x", "t0": 4, "c": 0.1,
                                   "iterations": 5, "seeds": [0],
                                   "out": "o", "tzero": 9}))
    with pytest.raises(ValueError, match="unknown spec keys"):
        load_spec(unknown)

    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"label": "x", "t0": 4}))
    with pytest.raises(ValueError, match="missing spec keys"):
        load_spec(missing)

    dangling = tmp_path / "dangling.json"
    dangling.write_text(json.dumps({"label": "x", "t0": 4, "c": 0.1,
                                    "iterations": 5, "seeds": [0], "out": "o",
                                    "layout": "nowhere.grid"}))
    with pytest.raises(ValueError, match="does not exist"):
        load_spec(dangling)


def test_spec_validation():
    with pytest.raises(ValueError, match="iterations"):
        ExperimentSpec(label="x", t0=4, c=0.1, iterations=0, seeds=[0], out="o")
    with pytest.raises(ValueError, match="seed"):
        ExperimentSpec(label="x", t0=4, c=0.1, iterations=5, seeds=[], out="o")
    with pytest.raises(ValueError, match="expert"):
        ExperimentSpec(label="x", t0=4, c=0.1, iterations=5, seeds=[0],
                       out="o", mdp="m.json")
    with pytest.raises(ValueError, match="event"):
        ExperimentSpec(label="x", t0=4, c=0.1, iterations=5, seeds=[0],
                       out="o", events=[{"permutation": [1, 0, 2, 3]}])
    with pytest.raises(ValueError, match="event"):
        ExperimentSpec(label="x", t0=4, c=0.1, iterations=5, seeds=[0],
                       out="o", events=[{"iteration": 3}])


# ---------------------------------------------------------------------------
# environment resolution


def test_resolve_environment_default_is_the_benchmark(tmp_path):
    spec = ExperimentSpec(label="d", t0=4, c=0.1, iterations=5, seeds=[0],
                          out=str(tmp_path / "o"))
    mdp, experts, events = resolve_environment(spec)
    assert mdp.n_states == 25
    assert len(experts) == 4
    assert events == []


def test_resolve_environment_from_layout(tmp_path):
    spec = tiny_spec(tmp_path)
    mdp, experts, events = resolve_environment(spec)
    assert mdp.n_states == 2
    assert len(experts) == 1


def test_resolve_environment_from_mdp_files(tmp_path):
    mdp_path, pol_path = identity_mdp_files(tmp_path)
    spec = ExperimentSpec(label="f", t0=4, c=0.1, iterations=5, seeds=[0],
                          out=str(tmp_path / "o"), mdp=str(mdp_path),
                          experts=[str(pol_path)])
    mdp, experts, _ = resolve_environment(spec)
    np.testing.assert_array_equal(mdp.transition[:, 0, :], np.eye(2))
    assert len(experts) == 1 and isinstance(experts[0], ExpertPolicy)


def test_resolve_environment_events_permute_the_original(tmp_path):
    sigma = [1, 0, 2, 3]
    spec = tiny_spec(tmp_path, events=[{"iteration": 3, "permutation": sigma},
                                       {"iteration": 6, "permutation": sigma}])
    mdp, _, events = resolve_environment(spec)
    assert [when for when, _ in events] == [3, 6]
    expected = permute_actions(mdp, sigma).transition
    # both events permute the pristine dynamics, not each other's output
    np.testing.assert_array_equal(events[0][1].transition, expected)
    np.testing.assert_array_equal(events[1][1].transition, expected)


def test_nominal_profiles_uniform_constants(bench):
    e_star, profiles = nominal_profiles(bench.mdp, bench.experts, bound_k=3.5)
    assert e_star == 0
    for p in profiles:
        assert p.slem == 0.0
        assert p.mix_const == 3.5 and p.k_const == 3.5
    assert profiles[0].gap == 0.0
    assert all(p.gap > 0.6 for p in profiles[1:])


# ---------------------------------------------------------------------------
# run_spec


def read_aggregate(path):
    rows = np.genfromtxt(path, delimiter=",", skip_header=1)
    return rows[:, 0].astype(int), rows[:, 1], rows[:, 2], rows[:, 3]


def test_run_spec_writes_the_full_file_set(tmp_path):
    spec = tiny_spec(tmp_path, seeds=[0, 1, 5])
    summary = run_spec(spec)
    out = Path(spec.out)
    for s in (0, 1, 5):
        assert (out / f"runlog_seed{s}.csv").exists()
        assert (out / f"regret_seed{s}.csv").exists()
    log = RunLog.from_csv(out / "runlog_seed5.csv")
    assert len(log) == 30
    assert log.meta["seed"] == "5"

    n, mean, std, bound = read_aggregate(out / "aggregate.csv")
    assert len(n) == 31 and n[0] == 0 and n[-1] == 30
    assert bound[0] == 0.0
    assert np.isfinite(bound).all()
    # single expert: pure transient growth (modulo float fuzz at n = 1)
    assert bound[1] == pytest.approx(0.0, abs=1e-12)
    assert (np.diff(bound[1:]) > 0).all()
    assert bound[-1] > 1.0

    rt = (out / "reward_time.csv").read_text().splitlines()
    assert rt[0] == "t,mean_cumulative_reward"
    assert len(rt) == 32

    assert summary["label"] == "tiny"
    assert summary["best_expert"] == 0
    assert summary["bound_status"] == "ok"
    assert summary["r_star"] == pytest.approx(0.002 / 1.02, abs=1e-8)
    assert summary["gaps"] == [0.0]
    assert summary["mean_final_regret"] == pytest.approx(float(mean[-1]),
                                                         abs=1e-9)


def test_run_spec_reruns_are_byte_identical(tmp_path):
    spec_a = tiny_spec(tmp_path, out=str(tmp_path / "a"))
    spec_b = replace(spec_a, out=str(tmp_path / "b"))
    run_spec(spec_a)
    run_spec(spec_b)
    for name in ("runlog_seed0.csv", "runlog_seed1.csv", "regret_seed0.csv",
                 "aggregate.csv", "reward_time.csv"):
        assert (tmp_path / "a" / name).read_bytes() \
            == (tmp_path / "b" / name).read_bytes()


def test_run_spec_aggregate_matches_per_seed_files(tmp_path):
    spec = tiny_spec(tmp_path)
    run_spec(spec)
    out = Path(spec.out)
    per_seed = []
    for s in (0, 1):
        rows = np.genfromtxt(out / f"regret_seed{s}.csv", delimiter=",",
                             skip_header=1)
        per_seed.append(rows[:, 1])
    stack = np.stack(per_seed)
    _, mean, std, _ = read_aggregate(out / "aggregate.csv")
    np.testing.assert_allclose(mean, stack.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(std, stack.std(axis=0, ddof=1), atol=1e-12)


def test_run_spec_parallel_workers_match_serial(tmp_path):
    spec_serial = tiny_spec(tmp_path, out=str(tmp_path / "serial"))
    spec_par = replace(spec_serial, out=str(tmp_path / "par"))
    run_spec(spec_serial, workers=1)
    run_spec(spec_par, workers=2)
    for name in ("runlog_seed0.csv", "runlog_seed1.csv", "aggregate.csv",
                 "reward_time.csv"):
        assert (tmp_path / "serial" / name).read_bytes() \
            == (tmp_path / "par" / name).read_bytes()


def test_run_spec_gap_failure_blanks_the_bound(tmp_path):
    # two experts with identical behavior: the runner-up's gap is zero, the
    # logarithmic bound has no denominator to work with
    layout = tmp_path / "twins.grid"
    layout.write_text(STRIP + "permutation = 0 1 2 3\n"
                              "permutation = 1 0 2 3\n")
    spec = tiny_spec(tmp_path, layout=str(layout), iterations=12)
    with pytest.warns(UserWarning, match="theory bound unavailable"):
        summary = run_spec(spec)
    assert summary["bound_status"].startswith("gap precondition failed")
    _, _, _, bound = read_aggregate(Path(spec.out) / "aggregate.csv")
    assert bound[0] == 0.0
    assert np.isnan(bound[1:]).all()


def test_run_spec_events_blank_the_bound_and_fire(tmp_path):
    spec = tiny_spec(tmp_path, iterations=8,
                     events=[{"iteration": 3, "permutation": [1, 0, 2, 3]}])
    with pytest.warns(UserWarning, match="events change the dynamics"):
        summary = run_spec(spec)
    assert "events" in summary["bound_status"]
    log = RunLog.from_csv(Path(spec.out) / "runlog_seed0.csv")
    assert log.meta["events"] == "3"
    _, _, _, bound = read_aggregate(Path(spec.out) / "aggregate.csv")
    assert np.isnan(bound[1:]).all()


# ---------------------------------------------------------------------------
# sweep_spec


def test_sweep_single_t0_matches_a_direct_run(tmp_path):
    base = tiny_spec(tmp_path, t0=8, out=str(tmp_path / "sweep"))
    direct = replace(base, out=str(tmp_path / "direct"))
    run_spec(direct)
    sweep_spec(base, [8])
    sub = tmp_path / "sweep" / "t0_8"
    for name in ("runlog_seed0.csv", "runlog_seed1.csv", "aggregate.csv",
                 "reward_time.csv"):
        assert (sub / name).read_bytes() \
            == (tmp_path / "direct" / name).read_bytes()
    assert (tmp_path / "sweep" / "combined.csv").exists()


def test_sweep_combined_files_are_long_format(tmp_path):
    base = tiny_spec(tmp_path, iterations=20, out=str(tmp_path / "sweep"))
    result = sweep_spec(base, [6, 8])
    assert [r["label"] for r in result["runs"]] == ["tiny-t0-6", "tiny-t0-8"]
    lines = (tmp_path / "sweep" / "combined.csv").read_text().splitlines()
    assert lines[0] == "t0,n,mean_regret,std_regret,theory_bound"
    assert len(lines) == 1 + 2 * 21
    t0_col = [ln.split(",")[0] for ln in lines[1:]]
    assert t0_col == ["6"] * 21 + ["8"] * 21

    rt = (tmp_path / "sweep" / "combined_reward_time.csv").read_text().splitlines()
    assert rt[0] == "t0,t,mean_cumulative_reward"
    assert len(rt) == 1 + 2 * 21


def test_sweep_rejects_bad_t0_lists(tmp_path):
    base = tiny_spec(tmp_path)
    with pytest.raises(ValueError, match="empty"):
        sweep_spec(base, [])
    with pytest.raises(ValueError, match="positive"):
        sweep_spec(base, [4, 0])


def test_sweep_regret_rate_decays_at_every_t0(sweep_runs):
    # the long benchmark sweeps: per-iteration regret keeps falling, and
    # each T0's mean curve tracks a ln n trend over the second half
    for t0 in (4, 16, 64):
        mean = sweep_runs[t0]["mean"]
        rates = [mean[100] / 100, mean[1000] / 1000, mean[5000] / 5000]
        assert rates[2] < rates[1] < rates[0]
        ns = np.arange(2500, 5001)
        _, _, r2 = log_linear_fit(ns, mean[2500:5001])
        assert r2 >= 0.9


# ---------------------------------------------------------------------------
# command line


def run_cli(argv):
    # capture stdout/stderr directly so the suite can run with -s
    out_buf, err_buf = io.StringIO(), io.StringIO()
    with redirect_stdout(out_buf), redirect_stderr(err_buf):
        code = main(argv)
    return code, out_buf.getvalue(), err_buf.getvalue()


def test_cli_bench_then_analyze_then_run_then_sweep(tmp_path):
    work = tmp_path / "bench"
    code, out, err = run_cli(["bench", "--out", str(work)])
    assert code == 0
    for name in ("benchmark.grid", "mdp.json", "expert_0.json",
                 "expert_1.json", "expert_2.json", "expert_3.json",
                 "sweep_t0_4.json", "sweep_t0_16.json", "sweep_t0_64.json",
                 "perturbation.json", "sweep_base.json"):
        assert (work / name).exists()
    assert "next steps" in out

    csv_path = tmp_path / "profiles.csv"
    code, out, err = run_cli(
        ["analyze", str(work / "mdp.json")]
        + [str(work / f"expert_{j}.json") for j in range(4)]
        + ["--out", str(csv_path)])
    assert code == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "expert,alpha,C,K,R_bar,Delta,irreducible,aperiodic"
    assert len(lines) == 5
    deltas = [float(ln.split(",")[5]) for ln in lines[1:]]
    assert sum(1 for d in deltas if d == 0.0) == 1
    ks = [float(ln.split(",")[3]) for ln in lines[1:]]
    assert all(k > 100 for k in ks)  # certified constants, not the nominal 2.0

    # run the perturbation spec briefly, overriding scale and output
    run_out = tmp_path / "short"
    code, out, err = run_cli(
        ["run", "--config", str(work / "perturbation.json"),
         "--iterations", "40", "--seeds", "0,1", "--out", str(run_out)])
    assert code == 0
    assert "best expert 0" in out
    assert (run_out / "runlog_seed0.csv").exists()
    assert (run_out / "aggregate.csv").exists()

    sweep_out = tmp_path / "sw"
    code, out, err = run_cli(
        ["sweep", "--config", str(work / "sweep_base.json"),
         "--t0", "8,16", "--iterations", "30", "--seeds", "0",
         "--out", str(sweep_out)])
    assert code == 0
    assert (sweep_out / "t0_8" / "aggregate.csv").exists()
    assert (sweep_out / "t0_16" / "aggregate.csv").exists()
    assert (sweep_out / "combined.csv").exists()
    assert (sweep_out / "combined_reward_time.csv").exists()


def test_cli_analyze_stdout_for_a_small_chain(tmp_path):
    # two-state chain with slem 0.7: certified constants are printable and
    # the row count matches the expert list
    P = np.array([[[0.9, 0.1]], [[0.2, 0.8]]])
    R = np.zeros((2, 1, 2))
    R[1, 0, :] = 1.0
    save_mdp(make_mdp(P, R), tmp_path / "m.json")
    save_policy(det_policy([0, 0], 1, expert_id=0), tmp_path / "p.json")
    code, out, err = run_cli(
        ["analyze", str(tmp_path / "m.json"), str(tmp_path / "p.json")])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "expert,alpha,C,K,R_bar,Delta,irreducible,aperiodic"
    cols = lines[1].split(",")
    assert float(cols[1]) == pytest.approx(0.7, abs=1e-9)
    assert float(cols[2]) == 2.0
    assert float(cols[3]) == pytest.approx(2.0 / 0.3, abs=1e-9)
    assert cols[6] == "true" and cols[7] == "true"


def test_cli_analyze_non_ergodic_exits_two(tmp_path):
    mdp_path, pol_path = identity_mdp_files(tmp_path)
    code, out, err = run_cli(["analyze", str(mdp_path), str(pol_path)])
    assert code == 2
    assert "precondition violation" in err
    assert "not" in err and "ergodic" in err


def test_cli_run_non_ergodic_exits_two(tmp_path):
    mdp_path, pol_path = identity_mdp_files(tmp_path)
    doc = {"label": "sad", "t0": 4, "c": 0.0, "iterations": 5, "seeds": [0],
           "out": "o", "mdp": "m.json", "experts": ["p.json"]}
    (tmp_path / "spec.json").write_text(json.dumps(doc))
    code, out, err = run_cli(["run", "--config", str(tmp_path / "spec.json")])
    assert code == 2
    assert "precondition violation" in err


def test_cli_usage_and_parse_errors_exit_one(tmp_path):
    assert run_cli([])[0] == 1
    assert run_cli(["frobnicate"])[0] == 1

    code, _, err = run_cli(["analyze", str(tmp_path / "absent.json"),
                            str(tmp_path / "also_absent.json")])
    assert code == 1

    bad = tmp_path / "bad.json"
    bad.write_text("{")
    pol = tmp_path / "p.json"
    save_policy(det_policy([0], 1), pol)
    code, _, err = run_cli(["analyze", str(bad), str(pol)])
    assert code == 1
    assert "not valid JSON" in err

    code, _, err = run_cli(["run", "--config", str(tmp_path / "nope.json")])
    assert code == 1

    spec = tiny_spec(tmp_path)
    save_spec(spec, tmp_path / "spec.json")
    code, _, err = run_cli(["run", "--config", str(tmp_path / "spec.json"),
                            "--t0", "4,16"])
    assert code == 1
    assert "use sweep" in err

    code, _, err = run_cli(["run", "--config", str(tmp_path / "spec.json"),
                            "--iterations", "soon"])
    assert code == 1
    assert "error:" in err


def test_cli_run_seed_override_writes_one_log(tmp_path):
    spec = tiny_spec(tmp_path, iterations=10)
    save_spec(spec, tmp_path / "spec.json")
    solo = tmp_path / "solo"
    code, out, err = run_cli(["run", "--config", str(tmp_path / "spec.json"),
                              "--seed", "7", "--out", str(solo)])
    assert code == 0
    assert (solo / "runlog_seed7.csv").exists()
    assert not (solo / "runlog_seed0.csv").exists()
    log = RunLog.from_csv(solo / "runlog_seed7.csv")
    assert log.meta["seed"] == "7"


def test_console_script_is_installed(tmp_path):
    out = subprocess.run(["mdpbandit", "--help"], capture_output=True,
                         text=True, timeout=60)
    assert out.returncode == 0
    for word in ("analyze", "run", "sweep", "bench"):
        assert word in out.stdout
