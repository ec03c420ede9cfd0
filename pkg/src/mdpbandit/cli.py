"""Command line front end.

Subcommands:
  analyze  certified per-expert chain profiles (CSV)
  run      execute one experiment spec across its seeds
  sweep    run one spec at several T0 values and combine the aggregates
  bench    materialize the built-in benchmark and its canonical specs

Exit codes: 0 success, 1 validation or parse error, 2 precondition
violation (non-ergodic chain, gap too small, mixing cap exceeded),
3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .chains import MixingConstantError, NoConvergenceError, NotErgodicError, \
    check_ergodicity, induced_chain, profile_expert, with_gaps
from .experiment import ExperimentSpec, load_spec, run_spec, save_spec, \
    sweep_spec
from .gridworld import DEFAULT_T0_SWEEP, benchmark_config, build_experts, \
    build_gridworld, format_layout
from .mdp import load_mdp, load_policy, save_mdp, save_policy, validate_mdp, \
    validate_policy
from .regret import GapTooSmallError

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _parse_int_list(text: str, flag: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise _UsageError(f"{flag} expects comma-separated integers, "
                          f"got {text!r}") from None


def cmd_analyze(args) -> int:
    mdp = load_mdp(args.mdp)
    rows = []
    policies = []
    for path in args.expert:
        policy = load_policy(path)
        bad = validate_policy(policy, mdp)
        if bad:
            raise ValueError(f"{path}: invalid policy: " + "; ".join(bad))
        policies.append(policy)
    for path, policy in zip(args.expert, policies):
        flags = check_ergodicity(induced_chain(mdp, policy))
        if not (flags["irreducible"] and flags["aperiodic"]):
            raise NotErgodicError(
                f"expert {policy.expert_id} ({path}): induced chain is not "
                f"ergodic (irreducible={flags['irreducible']}, "
                f"aperiodic={flags['aperiodic']})")
    profiles = [profile_expert(mdp, policy) for policy in policies]
    _, profiles = with_gaps(profiles)
    lines = ["expert,alpha,C,K,R_bar,Delta,irreducible,aperiodic"]
    for policy, p in zip(policies, profiles):
        lines.append(f"{policy.expert_id},{float(p.slem)!r},"
                     f"{float(p.mix_const)!r},{float(p.k_const)!r},"
                     f"{float(p.steady_reward)!r},{float(p.gap)!r},"
                     f"true,true")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _spec_with_overrides(args) -> ExperimentSpec:
    spec = load_spec(args.config)
    if args.seed is not None:
        spec.seeds = [args.seed]
    if args.seeds is not None:
        spec.seeds = _parse_int_list(args.seeds, "--seeds")
    if args.t0 is not None and not getattr(args, "t0_is_list", False):
        spec.t0 = int(args.t0)
    if args.c is not None:
        spec.c = args.c
    if args.iterations is not None:
        spec.iterations = args.iterations
    if args.out is not None:
        spec.out = args.out
    return spec


def _print_summary(summary: dict) -> None:
    print(f"[{summary['label']}] wrote {summary['out']}")
    print(f"  best expert {summary['best_expert']}, "
          f"R_bar* = {summary['r_star']:.6f}, gaps = "
          + ", ".join(f"{g:.4f}" for g in summary["gaps"]))
    print(f"  mean final regret {summary['mean_final_regret']:.3f}; "
          f"theory bound: {summary['bound_status']}")


def cmd_run(args) -> int:
    spec = _spec_with_overrides(args)
    summary = run_spec(spec, workers=args.workers)
    _print_summary(summary)
    return 0


def cmd_sweep(args) -> int:
    args.t0_is_list = True
    spec = _spec_with_overrides(args)
    t0_values = _parse_int_list(args.t0, "--t0") if args.t0 \
        else list(DEFAULT_T0_SWEEP)
    result = sweep_spec(spec, t0_values, workers=args.workers)
    for summary in result["runs"]:
        _print_summary(summary)
    print(f"[{result['label']}] combined files under {result['out']}")
    return 0


def cmd_bench(args) -> int:
    """Write the benchmark grid, MDP, trained experts and canonical specs."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = benchmark_config()
    (out / "benchmark.grid").write_text(format_layout(config))
    mdp = build_gridworld(config)
    bad = validate_mdp(mdp)
    if bad:
        raise ValueError("built benchmark failed validation: "
                         + "; ".join(bad))
    save_mdp(mdp, out / "mdp.json")
    experts = build_experts(mdp, config)
    expert_files = []
    for policy in experts:
        name = f"expert_{policy.expert_id}.json"
        save_policy(policy, out / name)
        expert_files.append(name)

    from .gridworld import canonical_experiments
    spec_files = []
    for spec in canonical_experiments(out_dir="."):
        spec.layout = "benchmark.grid"
        name = ("perturbation.json" if spec.label == "perturbation"
                else f"sweep_t0_{spec.t0}.json")
        save_spec(spec, out / name)
        spec_files.append(name)
    base = ExperimentSpec(label="sweep", t0=4, c=0.1, iterations=5000,
                          seeds=list(range(10)), out="./sweep",
                          layout="benchmark.grid")
    save_spec(base, out / "sweep_base.json")

    print(f"benchmark materialized under {out}")
    print("  grid + mdp.json + " + ", ".join(expert_files))
    print("  specs: " + ", ".join(spec_files) + ", sweep_base.json")
    print("next steps:")
    print(f"  mdpbandit analyze {out}/mdp.json "
          + " ".join(f"{out}/{f}" for f in expert_files))
    print(f"  mdpbandit sweep --config {out}/sweep_base.json --t0 "
          + ",".join(str(v) for v in DEFAULT_T0_SWEEP))
    print(f"  mdpbandit run --config {out}/perturbation.json")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="mdpbandit",
                     description="expert selection over finite MDPs")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("analyze",
                       help="certified chain profiles for experts on an MDP")
    p.add_argument("mdp", help="MDP definition file (JSON)")
    p.add_argument("expert", nargs="+", help="expert policy files (JSON)")
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_analyze)

    for name, func, help_text in (
            ("run", cmd_run, "run one experiment spec"),
            ("sweep", cmd_sweep, "run a spec across several T0 values")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment spec JSON")
        p.add_argument("--seed", type=int, help="replace the seed list with "
                       "this single seed")
        p.add_argument("--seeds", help="comma-separated seed list override")
        p.add_argument("--t0", help="T0 override (run: one integer; "
                       "sweep: comma-separated list)")
        p.add_argument("--c", type=float, help="schedule slope override")
        p.add_argument("--iterations", type=int, help="iteration count "
                       "override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel seed workers (default 1)")
        p.set_defaults(func=func)

    p = sub.add_parser("bench",
                       help="materialize the benchmark and canonical specs")
    p.add_argument("--out", default="bench", help="target directory "
                   "(default ./bench)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run" and args.t0 is not None:
            if "," in args.t0:
                raise _UsageError("run takes a single --t0; "
                                  "use sweep for a list")
            int(args.t0)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NotErgodicError, GapTooSmallError, MixingConstantError) as exc:
        print(f"precondition violation: {exc}", file=sys.stderr)
        return 2
    except NoConvergenceError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
