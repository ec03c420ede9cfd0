"""Regret accounting: curves, the exact decomposition, and bound curves.

Regret here is counted per selection, not per MDP step: after n pulls,
r(n) = n R_bar* - sum of the n per-pull average rewards.  The decomposition
splits that into the pull-count term, the suboptimal transient, and the
optimal transient, and the split is an algebraic identity, not a bound.

All cumulative sums run in extended precision (longdouble).  The identity
is tested to 1e-12 on runs whose regret reaches the thousands, and a plain
float64 prefix sum drifts past that at those magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RegretCurve",
    "GapTooSmallError",
    "regret_from_rewards",
    "cumulative_regret",
    "decomposition_terms",
    "decomposition_bound",
    "ucb_regret_bound",
    "harmonic_sum_check",
    "aggregate_runs",
    "cumulative_reward_time",
    "log_linear_fit",
    "write_aggregate_csv",
    "write_reward_time_csv",
]


class GapTooSmallError(Exception):
    """A suboptimal expert violates Delta_e > 2 K_e / T0; the bound is void."""


@dataclass
class RegretCurve:
    """r(n) for n = 0..N; values[0] is 0 by definition."""

    values: np.ndarray   # longdouble, length N + 1
    r_star: float
    log: object = None   # originating RunLog, if any

    def __len__(self) -> int:
        return len(self.values)


def regret_from_rewards(avg_rewards, r_star: float) -> np.ndarray:
    """Prefix regret of a reward sequence, in longdouble, with r(0) = 0."""
    rewards = np.asarray(avg_rewards, dtype=np.longdouble)
    n = np.arange(len(rewards) + 1, dtype=np.longdouble)
    sums = np.concatenate(([np.longdouble(0)], np.cumsum(rewards)))
    return n * np.longdouble(r_star) - sums


def cumulative_regret(log, r_star: float) -> RegretCurve:
    if len(log) == 0:
        raise ValueError("empty run log")
    return RegretCurve(values=regret_from_rewards(log.avg_rewards, r_star),
                       r_star=float(r_star), log=log)


def _best(profiles) -> tuple[int, np.ndarray, np.ndarray]:
    rewards = np.array([p.steady_reward for p in profiles])
    e_star = int(rewards.argmax())
    return e_star, rewards, rewards[e_star] - rewards


def decomposition_terms(log, profiles):
    """(term1, term2, term3) per prefix n; their sum equals r(n) exactly.

    term1 counts pulls weighted by gaps, term2 is the transient of the
    suboptimal pulls against their own steady rewards, term3 the transient
    of the optimal pulls against R_bar*.
    """
    e_star, rbar, deltas = _best(profiles)
    chosen = log.experts
    rewards = np.asarray(log.avg_rewards, dtype=np.longdouble)
    is_opt = chosen == e_star

    inc1 = np.asarray(deltas, dtype=np.longdouble)[chosen]
    inc2 = np.where(~is_opt,
                    np.asarray(rbar, dtype=np.longdouble)[chosen] - rewards,
                    np.longdouble(0))
    inc3 = np.where(is_opt, np.longdouble(rbar[e_star]) - rewards,
                    np.longdouble(0))
    zero = np.zeros(1, dtype=np.longdouble)
    term1 = np.concatenate((zero, np.cumsum(inc1)))
    term2 = np.concatenate((zero, np.cumsum(inc2)))
    term3 = np.concatenate((zero, np.cumsum(inc3)))
    return term1, term2, term3


def decomposition_bound(expected_pulls, profiles, schedule, n: int) -> float:
    """Sum of E[T_e(n)] (Delta_e + K_e/T0) over suboptimal e, plus the
    best expert's transient K_* sum over 1/T_m."""
    e_star, _, deltas = _best(profiles)
    t0 = schedule.t0
    total = 0.0
    for e, p in enumerate(profiles):
        if e == e_star:
            continue
        total += float(expected_pulls[e]) * (deltas[e] + p.k_const / t0)
    from .bandit import horizon
    total += profiles[e_star].k_const * math.fsum(
        1.0 / horizon(schedule, m) for m in range(n))
    return total


def ucb_regret_bound(profiles, schedule, n: int) -> float:
    """Closed-form expected-regret bound for the UCB selector at iteration n.

    Needs Delta_e > 2 K_e / T0 for every suboptimal expert; otherwise the
    logarithmic pull-count argument has nothing to work with and this
    raises GapTooSmallError naming the first offender.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    e_star, _, deltas = _best(profiles)
    t0 = schedule.t0
    c = schedule.slope
    total = 0.0
    for e, p in enumerate(profiles):
        if e == e_star:
            continue
        denom = deltas[e] - 2.0 * p.k_const / t0
        if denom <= 0:
            raise GapTooSmallError(
                f"expert {e}: gap {deltas[e]:.6f} <= 2 K_e/T0 = "
                f"{2.0 * p.k_const / t0:.6f}")
        pulls = 32.0 * math.log(n) / denom ** 2 + 1.0 + math.pi ** 2 / 3.0
        total += pulls * (deltas[e] + p.k_const / t0)
    k_star = profiles[e_star].k_const
    if c > 0:
        total += (k_star / c) * math.log((t0 + c * n - c) / t0)
    else:
        total += k_star * n / t0
    return total


def harmonic_sum_check(schedule, n: int) -> tuple[float, float]:
    """(exact sum of 1/T_m for m < n, closed-form bound).

    The bound is the integral comparison (1/c) ln((T0 + cn - c)/T0) and
    only exists for growing schedules; rounding T_m to integers costs at
    most n c / (2 T0^2) of slack, which callers add when comparing.
    """
    if schedule.slope <= 0:
        raise ValueError("bound form invalid for c = 0; "
                         "the constant schedule sums to n / T0 exactly")
    from .bandit import horizon
    exact = math.fsum(1.0 / horizon(schedule, m) for m in range(n))
    t0, c = schedule.t0, schedule.slope
    bound = (1.0 / c) * math.log((t0 + c * n - c) / t0)
    return exact, bound


def aggregate_runs(curves) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and sample standard deviation over runs."""
    if not curves:
        raise ValueError("no curves to aggregate")
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"curves have mismatched lengths {sorted(lengths)}")
    stack = np.stack([np.asarray(c.values, dtype=np.longdouble)
                      for c in curves])
    mean = stack.mean(axis=0).astype(float)
    if len(curves) == 1:
        return mean, np.zeros_like(mean)
    std = stack.std(axis=0, ddof=1).astype(float)
    return mean, std


def cumulative_reward_time(log) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative reward against MDP time, sampled at iteration boundaries.

    Per-pull averages convert back to step totals via R_m * T_m.  The time
    grid depends only on the schedule, so curves from different seeds of
    the same config align exactly.
    """
    t = np.concatenate(([0], log.t_start + log.horizons))
    step_totals = (np.asarray(log.avg_rewards, dtype=np.longdouble)
                   * np.asarray(log.horizons, dtype=np.longdouble))
    cum = np.concatenate(([np.longdouble(0)], np.cumsum(step_totals)))
    return t.astype(np.int64), cum.astype(float)


def log_linear_fit(n, y) -> tuple[float, float, float]:
    """Least squares y ~ a ln n + b; returns (a, b, R^2)."""
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(n) != len(y) or len(n) < 2:
        raise ValueError("need two or more aligned points to fit")
    if (n < 1).any():
        raise ValueError("fit window must have n >= 1")
    X = np.column_stack((np.log(n), np.ones(len(n))))
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def write_aggregate_csv(path, mean, std, bound) -> None:
    """Columns (n, mean_regret, std_regret, theory_bound); bound entries may
    be nan when the gap precondition fails or events invalidate it."""
    lines = ["n,mean_regret,std_regret,theory_bound"]
    for n in range(len(mean)):
        lines.append(f"{n},{float(mean[n])!r},{float(std[n])!r},"
                     f"{float(bound[n])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_reward_time_csv(path, t, cum) -> None:
    lines = ["t,mean_cumulative_reward"]
    for i in range(len(t)):
        lines.append(f"{int(t[i])},{float(cum[i])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
