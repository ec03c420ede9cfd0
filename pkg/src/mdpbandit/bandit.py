"""Expert selection over a live MDP: growing horizons, UCB index, run loop.

The loop departs from a classical bandit in one essential way: the
environment state carries over from one pull to the next.  Iteration n runs
the chosen expert for T_n steps starting wherever iteration n - 1 left the
chain, so a bad expert does not just earn little, it also hands the next
expert a bad starting state.  The K_e / T_0 term in the confidence bound is
what pays for that coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import run_expert, sample_initial_state

__all__ = [
    "HorizonSchedule",
    "BanditState",
    "RunLog",
    "horizon",
    "confidence_bound",
    "select_ucb",
    "ucb_selector",
    "run_mab",
]


@dataclass(frozen=True)
class HorizonSchedule:
    """T_n = max(T0, round(T0 + slope * n)); slope 0 is a constant schedule."""

    t0: int
    slope: float = 0.0

    def __post_init__(self):
        if self.t0 < 1:
            raise ValueError(f"T0 must be a positive integer, got {self.t0}")
        if self.slope < 0:
            raise ValueError(f"slope must be nonnegative, got {self.slope}")


def horizon(schedule: HorizonSchedule, n: int) -> int:
    # round() is banker's rounding at .5; deterministic and within the
    # half-step slack the harmonic-sum bound accounts for
    return max(schedule.t0, round(schedule.t0 + schedule.slope * n))


@dataclass
class BanditState:
    pulls: np.ndarray   # k_e, one count per expert
    sums: np.ndarray    # S_e, cumulative per-pull average rewards
    n: int = 0          # iterations completed, equals pulls.sum()
    elapsed: int = 0    # MDP steps consumed, sum of past T_m

    @classmethod
    def fresh(cls, n_experts: int) -> "BanditState":
        return cls(pulls=np.zeros(n_experts, dtype=np.int64),
                   sums=np.zeros(n_experts))


def confidence_bound(k_const: float, t0: int, k: int, n: int) -> float:
    """K_e/T0 + sqrt(8 ln n / k).  Callers resolve the cold start first."""
    if k < 1:
        raise ValueError("confidence bound undefined at k = 0; "
                         "pull the expert once first")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return k_const / t0 + math.sqrt(8.0 * math.log(n) / k)


def select_ucb(state: BanditState, k_consts, schedule: HorizonSchedule) -> int:
    """Argmax of S_e/k_e + confidence bound; unplayed experts go first.

    Both the cold-start rule and the argmax break ties toward the lowest
    expert index, so a run is reproducible down to the choice sequence.
    """
    if len(state.pulls) == 0:
        raise ValueError("no experts to select from")
    cold = np.flatnonzero(state.pulls == 0)
    if cold.size:
        return int(cold[0])
    k = state.pulls
    bounds = np.asarray(k_consts, dtype=float) / schedule.t0 \
        + np.sqrt(8.0 * math.log(state.n) / k)
    return int(np.argmax(state.sums / k + bounds))


def ucb_selector(k_consts):
    """Bind per-expert constants into a selector usable by run_mab."""
    consts = np.asarray(k_consts, dtype=float)

    def _select(state: BanditState, schedule: HorizonSchedule) -> int:
        return select_ucb(state, consts, schedule)

    return _select


@dataclass
class RunLog:
    """Per-iteration record of one run; column names match the CSV schema."""

    experts: np.ndarray       # expert chosen at iteration n
    horizons: np.ndarray      # T_n
    start_states: np.ndarray  # state the rollout started from
    avg_rewards: np.ndarray   # R_k, the per-step average of the pull
    t_start: np.ndarray       # MDP time when the iteration began
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.experts)

    def to_csv(self, path) -> None:
        lines = [f"# {key}={self.meta[key]}" for key in sorted(self.meta)]
        lines.append("n,expert,T_n,start_state,avg_reward,t_n")
        for n in range(len(self)):
            lines.append(f"{n},{self.experts[n]},{self.horizons[n]},"
                         f"{self.start_states[n]},"
                         f"{float(self.avg_rewards[n])!r},"
                         f"{self.t_start[n]}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition("=")
                    meta[key] = value
                    continue
                if line.startswith("n,"):
                    continue
                rows.append(line.split(","))
        if not rows:
            raise ValueError(f"{path}: no data rows")
        cols = list(zip(*rows))
        return cls(experts=np.array([int(x) for x in cols[1]]),
                   horizons=np.array([int(x) for x in cols[2]]),
                   start_states=np.array([int(x) for x in cols[3]]),
                   avg_rewards=np.array([float(x) for x in cols[4]]),
                   t_start=np.array([int(x) for x in cols[5]]),
                   meta=meta)


def run_mab(mdp, experts, profiles, schedule: HorizonSchedule,
            selector=None, iterations: int = 1,
            rng: np.random.Generator | None = None,
            events=()) -> RunLog:
    """The generic selection loop: choose, roll out T_n steps, update.

    events is a list of (iteration, replacement FiniteMdp); each replacement
    is installed before its iteration's selection, and the environment state
    survives the swap.  When selector is None a UCB selector is built from
    the profiles' k_const fields.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if not experts:
        raise ValueError("need at least one expert")
    if rng is None:
        rng = np.random.default_rng()
    if selector is None:
        if profiles is None:
            raise ValueError("need profiles to build the default UCB selector")
        selector = ucb_selector([p.k_const for p in profiles])

    pending = sorted(events, key=lambda ev: ev[0])
    for when, replacement in pending:
        if (replacement.n_states, replacement.n_actions) \
                != (mdp.n_states, mdp.n_actions):
            raise ValueError(
                f"event at iteration {when}: replacement MDP has "
                f"{replacement.n_states} states / {replacement.n_actions} "
                f"actions, expected {mdp.n_states} / {mdp.n_actions}")
    pending = list(pending)

    n_exp = len(experts)
    state = BanditState.fresh(n_exp)
    s = sample_initial_state(mdp, rng)

    chosen = np.zeros(iterations, dtype=np.int64)
    hors = np.zeros(iterations, dtype=np.int64)
    starts = np.zeros(iterations, dtype=np.int64)
    rewards = np.zeros(iterations)
    t_start = np.zeros(iterations, dtype=np.int64)

    current = mdp
    for n in range(iterations):
        while pending and pending[0][0] <= n:
            current = pending.pop(0)[1]
        T = horizon(schedule, n)
        e = selector(state, schedule)
        starts[n] = s
        t_start[n] = state.elapsed
        avg, s, _ = run_expert(current, experts[e], s, T, rng, record=False)
        chosen[n] = e
        hors[n] = T
        rewards[n] = avg
        state.sums[e] += avg
        state.pulls[e] += 1
        state.n += 1
        state.elapsed += T

    meta = {"t0": schedule.t0, "c": schedule.slope, "iterations": iterations}
    if events:
        meta["events"] = ";".join(str(w) for w, _ in
                                  sorted(events, key=lambda ev: ev[0]))
    if pending:
        # events scheduled at or beyond the end never fired; record that
        meta["unfired_events"] = ",".join(str(w) for w, _ in pending)
    return RunLog(experts=chosen, horizons=hors, start_states=starts,
                  avg_rewards=rewards, t_start=t_start, meta=meta)
