"""Induced-chain analysis: stationary laws, mixing certificates, gaps.

Every expert policy turns the MDP into a Markov chain.  This module computes
the quantities the selection index and the regret bounds are built from: the
stationary distribution mu_e, the second largest eigenvalue modulus alpha_e,
an empirically certified geometric-mixing constant C_e with K_e =
C_e / (1 - alpha_e), the steady-state reward, and the reward gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "InducedChain",
    "MixingProfile",
    "NotErgodicError",
    "NoConvergenceError",
    "MixingConstantError",
    "induced_chain",
    "check_ergodicity",
    "stationary_distribution",
    "slem",
    "mixing_constants",
    "steady_state_reward",
    "expected_avg_reward_from_state",
    "gaps",
    "default_horizon",
    "profile_expert",
    "with_gaps",
]

POWER_ITERATION_CAP = 10 ** 6


class NotErgodicError(Exception):
    """Chain is reducible or periodic; the steady-state machinery needs both."""


class NoConvergenceError(Exception):
    """Iteration budget exhausted before reaching tolerance."""


class MixingConstantError(Exception):
    """Empirical mixing constant exceeded a configured cap."""


@dataclass
class InducedChain:
    kernel: np.ndarray  # (S, S), row stochastic


@dataclass
class MixingProfile:
    """Everything the bandit and the bound curves need to know about one expert."""

    stationary: np.ndarray
    slem: float           # alpha_e
    mix_const: float      # C_e
    k_const: float        # K_e = C_e / (1 - alpha_e), exact by construction
    steady_reward: float  # R_bar^e
    gap: float = 0.0      # Delta_e, filled in by with_gaps


def induced_chain(mdp, policy) -> InducedChain:
    """P_tilde(s, s') = sum_a P(s, a, s') pi(s, a)."""
    P = mdp.transition
    pi = policy.policy
    if pi.shape != P.shape[:2]:
        raise ValueError(f"policy shape {pi.shape} does not match "
                         f"transition shape {P.shape[:2]}")
    return InducedChain(kernel=np.einsum("saj,sa->sj", P, pi))


def check_ergodicity(chain: InducedChain) -> dict:
    """{'irreducible': bool, 'aperiodic': bool} from the positive-entry digraph.

    Periods come from a BFS level assignment per strongly connected
    component: the gcd of (level[u] + 1 - level[v]) over internal edges
    u -> v is the component's period.  Components with no internal edge
    carry no cycle and are skipped.
    """
    A = chain.kernel > 0
    n_comp, labels = connected_components(csr_matrix(A), connection="strong")
    S = chain.kernel.shape[0]
    adj = [np.flatnonzero(A[s]) for s in range(S)]

    aperiodic = True
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        internal = [u for u in members
                    if any(labels[v] == comp for v in adj[u])]
        if not internal:
            continue
        root = int(members[0])
        level = {root: 0}
        queue = [root]
        g = 0
        while queue:
            u = queue.pop()
            for v in adj[u]:
                v = int(v)
                if labels[v] != comp:
                    continue
                if v in level:
                    g = math.gcd(g, level[u] + 1 - level[v])
                else:
                    level[v] = level[u] + 1
                    queue.append(v)
        if g != 1:
            aperiodic = False
    return {"irreducible": bool(n_comp == 1), "aperiodic": aperiodic}


def _require_ergodic(chain: InducedChain) -> None:
    flags = check_ergodicity(chain)
    if not (flags["irreducible"] and flags["aperiodic"]):
        raise NotErgodicError(
            f"chain is not ergodic: irreducible={flags['irreducible']}, "
            f"aperiodic={flags['aperiodic']}")


def stationary_distribution(chain: InducedChain, tol: float = 1e-10) -> np.ndarray:
    """Power iteration from uniform until the L1 update falls below tol.

    Returns a vector whose fixed-point residual ||mu P - mu||_1 is at most
    tol (the L1 norm never grows under a stochastic kernel, so the last
    update bounds the residual of the returned iterate).
    """
    _require_ergodic(chain)
    P = chain.kernel
    S = P.shape[0]
    mu = np.full(S, 1.0 / S)
    for _ in range(POWER_ITERATION_CAP):
        nxt = mu @ P
        if np.abs(nxt - mu).sum() <= tol:
            return nxt / nxt.sum()
        mu = nxt
    raise NoConvergenceError(
        f"stationary distribution did not reach tol={tol} within "
        f"{POWER_ITERATION_CAP} iterations")


def slem(chain: InducedChain) -> float:
    """Second largest eigenvalue modulus of the chain kernel."""
    _require_ergodic(chain)
    mods = np.sort(np.abs(np.linalg.eigvals(chain.kernel)))[::-1]
    return float(mods[1])


def default_horizon(alpha: float) -> int:
    # long enough for the geometric bound check out to t = 10 ceil(1/(1-a)),
    # and for the averaged bound out to T = 256
    if alpha <= 0.0:
        return 260
    return max(10 * math.ceil(1.0 / (1.0 - alpha)), 260)


def mixing_constants(chain: InducedChain, stationary: np.ndarray, alpha: float,
                     horizon: int, c_cap: float | None = None
                     ) -> tuple[float, float]:
    """Certify C_e over the horizon and return (C_e, K_e).

    C_e is the empirical supremum of ||P^t(s,.) - mu||_1 / alpha^t over
    t in [1, horizon] and all start states, floored at 2.0.  The floor is
    not cosmetic: the L1 distance between any two distributions is at most
    2, so C_e >= 2 makes the t = 0 term of the averaged-reward bound hold
    as well.  The supremum carries one part in 1e9 of slack to absorb
    rounding when a caller re-derives the ratios.

    c_cap, when given, is a configured ceiling on the empirical constant;
    exceeding it raises MixingConstantError instead of silently certifying
    a larger C_e.
    """
    _require_ergodic(chain)
    if alpha <= 1e-12:
        # (effectively) rank-1 kernel: exact after one step, constants by
        # convention
        return 2.0, 2.0
    if horizon < math.ceil(10.0 / (1.0 - alpha)):
        raise ValueError(
            f"horizon {horizon} shorter than ceil(10/(1-alpha)) = "
            f"{math.ceil(10.0 / (1.0 - alpha))}")
    P = chain.kernel
    S = P.shape[0]
    M = np.eye(S)
    alph = alpha ** np.arange(1, horizon + 1)
    sup = 0.0
    for t in range(horizon):
        M = M @ P
        d = float(np.abs(M - stationary).sum(axis=1).max())
        if d <= 1e-8:
            # below this the distance is dominated by the residual of the
            # computed stationary vector (update tol amplified by 1/(1-a)),
            # so the ratio measures solver error, not mixing; the tail it
            # skips contributes at most 1e-8 absolute, under every
            # tolerance the bound curves use
            break
        ratio = d / alph[t]
        if ratio > sup:
            sup = ratio
    if c_cap is not None and sup > c_cap:
        raise MixingConstantError(
            f"empirical mixing constant {sup:.6f} exceeds configured cap "
            f"{c_cap}")
    C = max(sup * (1.0 + 1e-9), 2.0)
    return C, C / (1.0 - alpha)


def steady_state_reward(mdp, policy, stationary: np.ndarray) -> float:
    """R_bar = E_{s ~ mu, a ~ pi, s' ~ P}[ E R(s, a, s') ]."""
    r = mdp.mean_reward()
    if policy.policy.shape != mdp.transition.shape[:2]:
        raise ValueError("policy does not match MDP dimensions")
    per_state = np.einsum("sa,saj,saj->s", policy.policy, mdp.transition, r)
    return float(stationary @ per_state)


def expected_avg_reward_from_state(mdp, policy, s0: int, T: int) -> float:
    """Exact E[(1/T) sum of the first T rewards | s_0 = s0], no sampling.

    Propagates the state law through the induced kernel and accumulates the
    per-state one-step expected reward.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 <= s0 < mdp.n_states:
        raise ValueError(f"invalid state index {s0}")
    P = mdp.transition
    r = mdp.mean_reward()
    rho = np.einsum("sa,saj,saj->s", policy.policy, P, r)
    kernel = induced_chain(mdp, policy).kernel
    mu_t = np.zeros(mdp.n_states)
    mu_t[s0] = 1.0
    total = 0.0
    for _ in range(T):
        total += float(mu_t @ rho)
        mu_t = mu_t @ kernel
    return total / T


def gaps(profiles: list[MixingProfile]) -> tuple[int, np.ndarray]:
    """Best expert (argmax steady reward, ties to the lowest index) and Delta_e."""
    if not profiles:
        raise ValueError("need at least one profile")
    rewards = np.array([p.steady_reward for p in profiles])
    e_star = int(rewards.argmax())
    return e_star, rewards[e_star] - rewards


def with_gaps(profiles: list[MixingProfile]) -> tuple[int, list[MixingProfile]]:
    """Copies of the profiles with the gap field filled in."""
    e_star, deltas = gaps(profiles)
    return e_star, [replace(p, gap=float(d)) for p, d in zip(profiles, deltas)]


def profile_expert(mdp, policy, tol: float = 1e-10,
                   horizon: int | None = None,
                   c_cap: float | None = None) -> MixingProfile:
    """Full certified profile of one expert on one MDP (gap left at 0)."""
    chain = induced_chain(mdp, policy)
    mu = stationary_distribution(chain, tol)
    alpha = slem(chain)
    if horizon is None:
        horizon = default_horizon(alpha)
    C, K = mixing_constants(chain, mu, alpha, horizon, c_cap=c_cap)
    rbar = steady_state_reward(mdp, policy, mu)
    return MixingProfile(stationary=mu, slem=alpha, mix_const=C, k_const=K,
                         steady_reward=rbar)
