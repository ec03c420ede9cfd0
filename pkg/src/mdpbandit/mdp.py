"""Finite MDP representation, validation, and seeded expert rollouts.

The simulator is the inner loop of everything else in this package, so the
sampling path is deliberately plain Python over precomputed cumulative rows:
per step it does one bisect on a list of floats, which benchmarks far faster
than any vectorized per-step alternative for the short horizons we run.

RNG stream contract (what a seeded run consumes, in order):
  1. one block of T uniforms for the state transitions, always;
     if the policy or the reward kernel is stochastic the block widens to
     (T, d) with one extra column per stochastic source, consumed row by row
     as (action draw, transition draw, reward draw)
  2. one block of T uniforms for observations, drawn after the step loop and
     only when the observation kernel is not the identity
Deterministic policies (one-hot rows), deterministic rewards and identity
observations consume exactly T uniforms per rollout.  The observation block
comes last so the state and reward stream never depends on the kernel O.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FiniteMdp",
    "ExpertPolicy",
    "Trajectory",
    "deterministic_reward",
    "validate_mdp",
    "reduce_observation_expert",
    "run_expert",
    "sample_initial_state",
    "save_mdp",
    "load_mdp",
    "save_policy",
    "load_policy",
]

_ATOL = 1e-9  # stochasticity tolerance shared by all row checks


@dataclass
class FiniteMdp:
    """Finite MDP with a discrete reward distribution per (s, a, s') triple.

    reward_values / reward_probs have shape (S, A, S, V): support points in
    [0, 1] and their probabilities.  Deterministic rewards are the V = 1
    special case, see :func:`deterministic_reward`.  Instances are treated
    as immutable after construction; the sampler caches lookup tables on
    the instance, keyed by nothing else.
    """

    n_states: int
    n_actions: int
    n_obs: int
    transition: np.ndarray          # (S, A, S)
    reward_values: np.ndarray       # (S, A, S, V)
    reward_probs: np.ndarray        # (S, A, S, V)
    observation: np.ndarray         # (S, Y)
    initial_dist: np.ndarray        # (S,)
    _tables: object = field(default=None, repr=False, compare=False)

    def mean_reward(self) -> np.ndarray:
        """Expected reward per (s, a, s'), shape (S, A, S)."""
        return (self.reward_values * self.reward_probs).sum(axis=-1)


@dataclass
class ExpertPolicy:
    """Stationary stochastic policy pi(s, a), shape (S, A)."""

    policy: np.ndarray
    expert_id: int = 0
    _tables: object = field(default=None, repr=False, compare=False)


@dataclass
class Trajectory:
    states: np.ndarray        # length T + 1, final state recorded
    actions: np.ndarray       # length T
    rewards: np.ndarray       # length T, each in [0, 1]
    observations: np.ndarray  # length T, the observation acted on at step t


def deterministic_reward(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Wrap a (S, A, S) reward table as a single-support distribution."""
    table = np.asarray(table, dtype=float)
    return table[..., None].copy(), np.ones(table.shape + (1,))


def validate_mdp(mdp: FiniteMdp) -> list[str]:
    """Return every stochasticity violation with indices; empty means valid."""
    bad = []
    P = mdp.transition
    if P.shape != (mdp.n_states, mdp.n_actions, mdp.n_states):
        bad.append(f"transition shape {P.shape} does not match "
                   f"({mdp.n_states}, {mdp.n_actions}, {mdp.n_states})")
        return bad  # index checks below assume consistent shapes
    if (P < 0).any():
        for s, a, t in zip(*np.where(P < 0)):
            bad.append(f"negative transition entry P({s},{a},{t}) = {P[s, a, t]}")
    sums = P.sum(axis=2)
    for s, a in zip(*np.where(np.abs(sums - 1.0) > _ATOL)):
        bad.append(f"transition row sum {sums[s, a]} at (s={s}, a={a}), expected 1")

    rv, rp = mdp.reward_values, mdp.reward_probs
    if rv.shape != rp.shape or rv.shape[:3] != P.shape:
        bad.append(f"reward table shapes {rv.shape} / {rp.shape} inconsistent "
                   f"with transition shape {P.shape}")
        return bad
    psums = rp.sum(axis=-1)
    for s, a, t in zip(*np.where(np.abs(psums - 1.0) > _ATOL)):
        bad.append(f"reward probabilities sum {psums[s, a, t]} at "
                   f"(s={s}, a={a}, s'={t}), expected 1")
    off = (rv < 0) | (rv > 1)
    for s, a, t, v in zip(*np.where(off)):
        bad.append(f"reward support value {rv[s, a, t, v]} outside [0, 1] at "
                   f"(s={s}, a={a}, s'={t})")
    if (rp < 0).any():
        for s, a, t, v in zip(*np.where(rp < 0)):
            bad.append(f"negative reward probability at (s={s}, a={a}, s'={t})")

    O = mdp.observation
    if O.shape != (mdp.n_states, mdp.n_obs):
        bad.append(f"observation shape {O.shape} does not match "
                   f"({mdp.n_states}, {mdp.n_obs})")
    else:
        osums = O.sum(axis=1)
        for (s,) in zip(*np.where(np.abs(osums - 1.0) > _ATOL)):
            bad.append(f"observation row sum {osums[s]} at s={s}, expected 1")
        if (O < 0).any():
            bad.append("negative observation entries")

    mu0 = mdp.initial_dist
    if mu0.shape != (mdp.n_states,):
        bad.append(f"initial distribution shape {mu0.shape} does not match "
                   f"({mdp.n_states},)")
    elif abs(float(mu0.sum()) - 1.0) > _ATOL or (mu0 < 0).any():
        bad.append(f"initial distribution sum {float(mu0.sum())}, expected 1")
    return bad


def validate_policy(policy: ExpertPolicy, mdp: FiniteMdp) -> list[str]:
    pi = policy.policy
    bad = []
    if pi.shape != (mdp.n_states, mdp.n_actions):
        return [f"policy shape {pi.shape} does not match "
                f"({mdp.n_states}, {mdp.n_actions})"]
    if (pi < 0).any() or (pi > 1).any():
        bad.append("policy entries outside [0, 1]")
    rows = pi.sum(axis=1)
    for (s,) in zip(*np.where(np.abs(rows - 1.0) > _ATOL)):
        bad.append(f"policy row sum {rows[s]} at s={s}, expected 1")
    return bad


def reduce_observation_expert(obs_map: np.ndarray, observation: np.ndarray,
                              expert_id: int = 0) -> ExpertPolicy:
    """Fold an observation-conditioned strategy into a state policy.

    pi(s, a) = sum_y obs_map(y, a) * O(s, y).  This is how a partially
    observing expert becomes an ordinary ExpertPolicy; with the identity
    kernel it returns obs_map itself row for row.
    """
    obs_map = np.asarray(obs_map, dtype=float)
    observation = np.asarray(observation, dtype=float)
    if obs_map.ndim != 2 or observation.ndim != 2 \
            or observation.shape[1] != obs_map.shape[0]:
        raise ValueError(
            f"observation table {observation.shape} does not compose with "
            f"obs_map {obs_map.shape}")
    return ExpertPolicy(policy=observation @ obs_map, expert_id=expert_id)


class _Tables:
    """Cumulative-row lookup tables for one MDP (built once, cached)."""

    __slots__ = ("cdf", "det_reward", "rmean", "rvals", "rcdf", "identity_obs",
                 "obs_cdf")

    def __init__(self, mdp: FiniteMdp):
        P = mdp.transition
        S, A, _ = P.shape
        self.cdf = []
        for s in range(S):
            rows = []
            for a in range(A):
                row = np.cumsum(P[s, a]).tolist()
                row[-1] = 1.0  # guard the u ~ 1 edge; see sampler note below
                rows.append(row)
            self.cdf.append(rows)
        self.det_reward = mdp.reward_values.shape[-1] == 1
        if self.det_reward:
            self.rmean = [[mdp.reward_values[s, a, :, 0].tolist()
                           for a in range(A)] for s in range(S)]
            self.rvals = self.rcdf = None
        else:
            self.rmean = None
            self.rvals = mdp.reward_values
            self.rcdf = np.cumsum(mdp.reward_probs, axis=-1)
        self.identity_obs = (mdp.n_obs == mdp.n_states
                             and np.array_equal(mdp.observation,
                                                np.eye(mdp.n_states)))
        self.obs_cdf = None if self.identity_obs else \
            np.cumsum(mdp.observation, axis=1)


class _PolicyTables:
    __slots__ = ("deterministic", "act", "cdf")

    def __init__(self, policy: ExpertPolicy):
        pi = policy.policy
        # one-hot detection is exact on purpose: a row with max 1.0 has no
        # other mass, so argmax is the whole distribution
        self.deterministic = bool((pi.max(axis=1) == 1.0).all())
        if self.deterministic:
            self.act = pi.argmax(axis=1).tolist()
            self.cdf = None
        else:
            self.act = None
            self.cdf = [np.cumsum(row).tolist() for row in pi]
            for row in self.cdf:
                row[-1] = 1.0


def _tables_for(mdp: FiniteMdp) -> _Tables:
    if mdp._tables is None:
        mdp._tables = _Tables(mdp)
    return mdp._tables


def _policy_tables_for(policy: ExpertPolicy) -> _PolicyTables:
    if policy._tables is None:
        policy._tables = _PolicyTables(policy)
    return policy._tables


def _pick(row: list, u: float) -> int:
    # bisect_right returns the first index whose cumulative value exceeds u,
    # so zero-probability entries are never selected; the final entry is
    # pinned to 1.0 when the table is built, which keeps u close to 1 from
    # stepping past the end of the row
    j = bisect_right(row, u)
    if j >= len(row):
        j = len(row) - 1
    return j


def run_expert(mdp: FiniteMdp, policy: ExpertPolicy, s0: int, T: int,
               rng: np.random.Generator, record: bool = True):
    """Run one expert for T steps from s0; returns (avg_reward, final_state, trajectory).

    avg_reward is the per-step mean, the R_k fed to the selector.  With
    record=False the trajectory is None but the consumed RNG stream is
    identical, so logs with and without trajectories replay bit for bit.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 <= s0 < mdp.n_states:
        raise ValueError(f"invalid state index {s0} for {mdp.n_states} states")
    tabs = _tables_for(mdp)
    ptabs = _policy_tables_for(policy)

    stoch_pol = not ptabs.deterministic
    stoch_rew = not tabs.det_reward
    cols = 1 + stoch_pol + stoch_rew
    if cols == 1:
        u = rng.random(T).tolist()
    else:
        u = rng.random((T, cols))

    cdf = tabs.cdf
    s = s0
    total = 0.0
    if record:
        states, actions, rewards = [s], [], []
    if cols == 1 and tabs.det_reward:
        # fast path: deterministic policy and rewards, one uniform a step
        act = ptabs.act
        rmean = tabs.rmean
        if record:
            for t in range(T):
                a = act[s]
                j = _pick(cdf[s][a], u[t])
                r = rmean[s][a][j]
                total += r
                actions.append(a)
                rewards.append(r)
                states.append(j)
                s = j
        else:
            for t in range(T):
                a = act[s]
                j = _pick(cdf[s][a], u[t])
                total += rmean[s][a][j]
                s = j
    else:
        pol_cdf = ptabs.cdf
        act = ptabs.act
        for t in range(T):
            row = u[t]
            c = 0
            if stoch_pol:
                a = _pick(pol_cdf[s], row[c])
                c += 1
            else:
                a = act[s]
            j = _pick(cdf[s][a], float(row[c]))
            c += 1
            if stoch_rew:
                vi = bisect_right(tabs.rcdf[s, a, j].tolist(), float(row[c]))
                vi = min(vi, tabs.rvals.shape[-1] - 1)
                r = float(tabs.rvals[s, a, j, vi])
            else:
                r = tabs.rmean[s][a][j]
            total += r
            if record:
                actions.append(a)
                rewards.append(r)
                states.append(j)
            s = j

    traj = None
    if tabs.identity_obs:
        if record:
            traj = Trajectory(states=np.asarray(states),
                              actions=np.asarray(actions),
                              rewards=np.asarray(rewards),
                              observations=np.asarray(states[:-1]))
    else:
        # drawn after the step loop, and drawn whether or not we record,
        # so the state stream is independent of both O and the record flag
        ou = rng.random(T)
        if record:
            obs_cdf = tabs.obs_cdf
            ys = [_pick(obs_cdf[st].tolist(), float(ou[t]))
                  for t, st in enumerate(states[:-1])]
            traj = Trajectory(states=np.asarray(states),
                              actions=np.asarray(actions),
                              rewards=np.asarray(rewards),
                              observations=np.asarray(ys))
    return total / T, s, traj


def sample_initial_state(mdp: FiniteMdp, rng: np.random.Generator) -> int:
    """Draw s0 from mu0.  Point masses are read off without consuming RNG."""
    mu0 = mdp.initial_dist
    if mu0.max() == 1.0:
        return int(mu0.argmax())
    return _pick(np.cumsum(mu0).tolist(), float(rng.random()))


# ---------------------------------------------------------------------------
# file format: JSON with keys
#   states, actions, observations, transition, reward, observation_kernel,
#   initial
# reward is {"values": nested S x A x S x V, "probs": same shape}.  Floats
# serialize through repr so load(save(m)) reproduces every array bit for bit.

def _to_jsonable(mdp: FiniteMdp) -> dict:
    return {
        "states": mdp.n_states,
        "actions": mdp.n_actions,
        "observations": mdp.n_obs,
        "transition": mdp.transition.tolist(),
        "reward": {"values": mdp.reward_values.tolist(),
                   "probs": mdp.reward_probs.tolist()},
        "observation_kernel": mdp.observation.tolist(),
        "initial": mdp.initial_dist.tolist(),
    }


def save_mdp(mdp: FiniteMdp, path) -> None:
    Path(path).write_text(json.dumps(_to_jsonable(mdp), indent=1) + "\n")


def load_mdp(path) -> FiniteMdp:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    try:
        mdp = FiniteMdp(
            n_states=int(doc["states"]),
            n_actions=int(doc["actions"]),
            n_obs=int(doc["observations"]),
            transition=np.asarray(doc["transition"], dtype=float),
            reward_values=np.asarray(doc["reward"]["values"], dtype=float),
            reward_probs=np.asarray(doc["reward"]["probs"], dtype=float),
            observation=np.asarray(doc["observation_kernel"], dtype=float),
            initial_dist=np.asarray(doc["initial"], dtype=float),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: missing or malformed field ({exc})") from exc
    bad = validate_mdp(mdp)
    if bad:
        raise ValueError(f"{path}: invalid MDP: " + "; ".join(bad[:5]))
    return mdp


def save_policy(policy: ExpertPolicy, path) -> None:
    doc = {"expert_id": policy.expert_id, "policy": policy.policy.tolist()}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_policy(path) -> ExpertPolicy:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return ExpertPolicy(policy=np.asarray(doc["policy"], dtype=float),
                            expert_id=int(doc["expert_id"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: missing or malformed field ({exc})") from exc
