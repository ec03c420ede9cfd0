"""Experiment descriptions and the engine that runs them.

An ExperimentSpec is a JSON-serializable description of one configuration:
where the MDP and experts come from (files, or the built-in gridworld
benchmark), the schedule, the seeds, and any mid-run dynamics events.
Relative paths inside a spec file are resolved against the file's own
directory, so a directory of spec plus data files is relocatable.

The selector in these runs uses one uniform confidence constant (bound_k,
default 2.0, the value a one-step-mixing chain certifies to) for every
expert rather than the certified per-expert constants: certified constants
on slowly mixing chains differ by orders of magnitude across experts and
turn the index into a constant-offset contest the reward signal cannot
move.  Steady rewards, gaps and the regret reference R_bar* are exact.
The closed-form bound curve is evaluated with the same constants the
selector actually uses, and is reported as nan with a warning when its gap
precondition fails or when events change the dynamics mid-run.
"""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bandit import HorizonSchedule, horizon, run_mab
from .chains import MixingProfile, induced_chain, stationary_distribution, \
    steady_state_reward, with_gaps
from .mdp import load_mdp, load_policy
from .regret import GapTooSmallError, aggregate_runs, cumulative_regret, \
    cumulative_reward_time, ucb_regret_bound, write_aggregate_csv, \
    write_reward_time_csv

__all__ = [
    "ExperimentSpec",
    "load_spec",
    "save_spec",
    "resolve_environment",
    "nominal_profiles",
    "run_spec",
    "sweep_spec",
]


@dataclass
class ExperimentSpec:
    label: str
    t0: int
    c: float
    iterations: int
    seeds: list
    out: str
    events: list = field(default_factory=list)
    mdp: str | None = None
    experts: list | None = None
    layout: str | None = None
    bound_k: float = 2.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.mdp and not self.experts:
            raise ValueError("an mdp file requires expert policy files")
        for ev in self.events:
            if "iteration" not in ev or not ({"permutation", "mdp"} & ev.keys()):
                raise ValueError(f"event {ev} needs an iteration and either "
                                 f"a permutation or an mdp file")


_SPEC_KEYS = {"label", "t0", "c", "iterations", "seeds", "out", "events",
              "mdp", "experts", "layout", "bound_k"}


def _resolve_path(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def load_spec(path) -> ExperimentSpec:
    """Load a spec; relative file references become absolute against the
    spec's directory, and referenced files must exist."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    unknown = set(doc) - _SPEC_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown spec keys {sorted(unknown)}")
    missing = {"label", "t0", "c", "iterations", "seeds", "out"} - set(doc)
    if missing:
        raise ValueError(f"{path}: missing spec keys {sorted(missing)}")
    base = path.parent
    doc["out"] = _resolve_path(base, doc["out"])
    doc["mdp"] = _resolve_path(base, doc.get("mdp"))
    doc["layout"] = _resolve_path(base, doc.get("layout"))
    if doc.get("experts"):
        doc["experts"] = [_resolve_path(base, p) for p in doc["experts"]]
    events = []
    for ev in doc.get("events", []):
        ev = dict(ev)
        if "mdp" in ev:
            ev["mdp"] = _resolve_path(base, ev["mdp"])
        events.append(ev)
    doc["events"] = events
    spec = ExperimentSpec(**doc)
    for ref in [spec.mdp, spec.layout] + (spec.experts or []) \
            + [ev["mdp"] for ev in spec.events if "mdp" in ev]:
        if ref is not None and not Path(ref).exists():
            raise ValueError(f"{path}: referenced file {ref} does not exist")
    return spec


def save_spec(spec: ExperimentSpec, path) -> None:
    Path(path).write_text(json.dumps(asdict(spec), indent=1) + "\n")


def resolve_environment(spec: ExperimentSpec):
    """Materialize (mdp, experts, events) from a spec.

    Permutation events re-permute the original dynamics, not whatever an
    earlier event installed.
    """
    from .gridworld import benchmark_config, build_experts, build_gridworld, \
        load_layout, permute_actions
    if spec.mdp:
        mdp = load_mdp(spec.mdp)
        experts = [load_policy(p) for p in spec.experts]
    else:
        config = load_layout(spec.layout) if spec.layout else benchmark_config()
        mdp = build_gridworld(config)
        experts = build_experts(mdp, config)
    events = []
    for ev in spec.events:
        when = int(ev["iteration"])
        if "mdp" in ev:
            events.append((when, load_mdp(ev["mdp"])))
        else:
            events.append((when, permute_actions(mdp, ev["permutation"])))
    return mdp, experts, events


def nominal_profiles(mdp, experts, bound_k: float = 2.0):
    """Runtime profiles: exact stationary laws and steady rewards, with the
    uniform confidence constant standing in for C_e and K_e (alpha 0, so
    the K = C/(1 - alpha) invariant holds).  Returns (best expert, list)."""
    profiles = []
    for policy in experts:
        chain = induced_chain(mdp, policy)
        mu = stationary_distribution(chain)
        profiles.append(MixingProfile(
            stationary=mu, slem=0.0, mix_const=float(bound_k),
            k_const=float(bound_k),
            steady_reward=steady_state_reward(mdp, policy, mu)))
    return with_gaps(profiles)


def _atomic_write(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _write_regret_csv(path, values) -> None:
    lines = ["n,regret"]
    for n, v in enumerate(values):
        lines.append(f"{n},{float(v)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _seed_task(payload):
    (mdp, experts, profiles, schedule, iterations, events, seed,
     out_dir, r_star) = payload
    rng = np.random.default_rng(seed)
    log = run_mab(mdp, experts, profiles, schedule, None, iterations, rng,
                  events)
    log.meta["seed"] = seed
    out = Path(out_dir)
    _atomic_write(out / f"runlog_seed{seed}.csv", log.to_csv)
    curve = cumulative_regret(log, r_star)
    vals = np.asarray(curve.values, dtype=float)
    _atomic_write(out / f"regret_seed{seed}.csv",
                  lambda p: _write_regret_csv(p, vals))
    t, cum = cumulative_reward_time(log)
    return seed, vals, cum


def run_spec(spec: ExperimentSpec, workers: int = 1) -> dict:
    """Run every seed of a spec, write per-seed and aggregate CSV files.

    Emits runlog_seed<i>.csv and regret_seed<i>.csv per seed, plus
    aggregate.csv (n, mean_regret, std_regret, theory_bound) and
    reward_time.csv (t, mean_cumulative_reward).  Returns a summary dict.
    """
    mdp, experts, events = resolve_environment(spec)
    e_star, profiles = nominal_profiles(mdp, experts, spec.bound_k)
    r_star = profiles[e_star].steady_reward
    schedule = HorizonSchedule(spec.t0, spec.c)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)

    bound_status = "ok"
    if events:
        bound_status = "events change the dynamics mid-run; bound not defined"
    else:
        try:
            ucb_regret_bound(profiles, schedule, 1)
        except GapTooSmallError as exc:
            bound_status = f"gap precondition failed ({exc})"
    if bound_status != "ok":
        warnings.warn(f"{spec.label}: theory bound unavailable, "
                      f"{bound_status}", stacklevel=2)

    payloads = [(mdp, experts, profiles, schedule, spec.iterations, events,
                 seed, str(out), r_star) for seed in spec.seeds]
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, vals, cum in pool.map(_seed_task, payloads):
                results[seed] = (vals, cum)
    else:
        for payload in payloads:
            seed, vals, cum = _seed_task(payload)
            results[seed] = (vals, cum)

    # stack in spec order so the aggregate is identical however seeds ran
    curves = np.stack([results[s][0] for s in spec.seeds])
    mean = curves.mean(axis=0)
    std = curves.std(axis=0, ddof=1) if len(spec.seeds) > 1 \
        else np.zeros_like(mean)
    if bound_status == "ok":
        bound = np.empty(spec.iterations + 1)
        bound[0] = 0.0
        for n in range(1, spec.iterations + 1):
            bound[n] = ucb_regret_bound(profiles, schedule, n)
    else:
        # r(0) = 0 holds unconditionally; only the n >= 1 entries are undefined
        bound = np.full(spec.iterations + 1, np.nan)
        bound[0] = 0.0
    _atomic_write(out / "aggregate.csv",
                  lambda p: write_aggregate_csv(p, mean, std, bound))

    horizons = np.array([horizon(schedule, n)
                         for n in range(spec.iterations)], dtype=np.int64)
    t_grid = np.concatenate(([0], np.cumsum(horizons)))
    cum_mean = np.stack([results[s][1] for s in spec.seeds]).mean(axis=0)
    _atomic_write(out / "reward_time.csv",
                  lambda p: write_reward_time_csv(p, t_grid, cum_mean))

    return {
        "label": spec.label,
        "out": str(out),
        "seeds": list(spec.seeds),
        "r_star": float(r_star),
        "best_expert": int(e_star),
        "gaps": [float(p.gap) for p in profiles],
        "bound_status": bound_status,
        "mean_final_regret": float(mean[-1]),
    }


def sweep_spec(base: ExperimentSpec, t0_values, workers: int = 1) -> dict:
    """One run_spec per T0 under base.out/t0_<v>, plus combined long-format
    files aligned on n (regret) and t (reward)."""
    t0_values = list(t0_values)
    if not t0_values:
        raise ValueError("empty T0 list")
    if any(v < 1 for v in t0_values):
        raise ValueError(f"T0 values must be positive, got {t0_values}")
    summaries = []
    for v in t0_values:
        sub = replace(base, t0=v, label=f"{base.label}-t0-{v}",
                      out=str(Path(base.out) / f"t0_{v}"))
        summaries.append(run_spec(sub, workers=workers))

    base_out = Path(base.out)
    lines = ["t0,n,mean_regret,std_regret,theory_bound"]
    reward_lines = ["t0,t,mean_cumulative_reward"]
    for v, summary in zip(t0_values, summaries):
        sub_out = Path(summary["out"])
        with open(sub_out / "aggregate.csv") as fh:
            next(fh)
            for line in fh:
                lines.append(f"{v},{line.strip()}")
        with open(sub_out / "reward_time.csv") as fh:
            next(fh)
            for line in fh:
                reward_lines.append(f"{v},{line.strip()}")
    _atomic_write(base_out / "combined.csv",
                  lambda p: Path(p).write_text("\n".join(lines) + "\n"))
    _atomic_write(base_out / "combined_reward_time.csv",
                  lambda p: Path(p).write_text("\n".join(reward_lines) + "\n"))
    return {"label": base.label, "out": str(base_out), "runs": summaries}
