"""Command-line entry point: ``polorch <subcommand> ...``.

Exit codes: 0 on success, 2 on invalid input, 3 when an audit or the regret
harness finds a violated property.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .adversarial import ALIASES
from .estimation import EstimationConfig
from .matching import StateSpaceTooLarge
from .scenario import Scenario, ScenarioError, apply_overrides, generated_doc, scenario_one_doc

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CHECK_FAILED = 3


def _load(args) -> Scenario:
    try:
        doc = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from None
    overrides = list(args.set or [])
    for flag, path in (("T", "learning.T"), ("N", "learning.N"), ("seed", "learning.root_seed")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{path}={value}")
    return Scenario.from_dict(apply_overrides(doc, overrides))


def _output(args, scenario: Scenario | None, leaf: str) -> Path:
    if args.output:
        return ex.resolve_output_dir(args.output)
    base = scenario.section("reporting")["output_dir"] if scenario else "runs"
    return ex.resolve_output_dir(Path(base) / leaf)


def cmd_solve(args) -> int:
    scenario = _load(args)
    out = _output(args, scenario, "solve")
    result = ex.solve(scenario, out)
    for name, value in zip(result.header(), result.row()):
        print(f"{name:>28s}  {value:.6f}")
    print(f"wrote {out / 'table.csv'}")
    return EXIT_OK


def cmd_learn(args) -> int:
    scenario = _load(args)
    strategy = args.strategy or scenario.section("learning")["strategy"]
    out = _output(args, scenario, f"learn-{args.mode}-{strategy}")

    def progress(n, N, rec):
        print(f"run {n}/{N}: final value {rec.values[-1]:.4f}", file=sys.stderr)

    result = ex.learn(scenario, args.mode, strategy, out, progress=progress)
    summary = result.summary()
    for key in ("target_value", "optimal_value", "best_expert_value", "final_mean", "tail_mean", "mean_cesaro_regret"):
        print(f"{key:>20s}  {summary[key]:.6f}")
    print(f"wrote {out / 'curve.csv'}")
    return EXIT_OK


def cmd_regret(args) -> int:
    strategies = [ALIASES.get(s, s) for s in args.strategies]
    out = ex.resolve_output_dir(args.output or "runs/regret-harness")
    rows = ex.regret_harness(args.K, args.M, args.T, strategies, range(args.seeds), checkpoints=args.checkpoints, output_dir=out)
    bad = [r for r in rows if r.violation]
    print(f"{len(rows)} checkpoints, {len(bad)} violations; wrote {out / 'regret.csv'}")
    return EXIT_CHECK_FAILED if bad else EXIT_OK


def cmd_audit(args) -> int:
    if args.scenario:
        scenario = _load(args)
        model, experts = ex.build_model(scenario)
        mdp = model.mdp
        rng = np.random.default_rng(args.seed)
        weights = rng.dirichlet(np.ones(experts.shape[0]), size=mdp.num_states)
        config = scenario.estimation_config()
    else:
        scenario = None
        mdp, experts, weights = ex.small_audit_problem(args.problem_seed)
        config = EstimationConfig.for_discount(mdp.discount, args.epsilon, args.kappa)
    report = ex.estimator_audit(mdp, experts, weights, config, args.samples, seed=args.seed, num_pairs=args.pairs)
    out = _output(args, scenario, "estimator-audit")
    ex.write_outputs(out, {"audit.csv": report.csv(), "audit.txt": report.text()})
    print(report.text(), end="")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_gen(args) -> int:
    doc = scenario_one_doc() if args.kind == "scenario1" else generated_doc(args.seed)
    text = json.dumps(Scenario.from_dict(doc).doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        path = Path(args.output)  # an input for later commands, so not re-rooted
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _scenario_args(p, required=True):
    if required:
        p.add_argument("scenario", help="scenario JSON file")
    else:
        p.add_argument("scenario", nargs="?", help="scenario JSON file (default: small random MDP)")
    p.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a scenario field, e.g. learning.T=500")
    p.add_argument("--output", help=f"output directory (relative paths resolve under ${ex.OUTPUT_ROOT_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polorch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact expert, orchestration and optimal values")
    _scenario_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("learn", help="oracle or estimated learning curves")
    _scenario_args(p)
    p.add_argument("--mode", choices=("oracle", "estimated"), default="oracle")
    p.add_argument("--strategy", choices=tuple(ALIASES))
    p.add_argument("--T", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--seed", type=int, help="root seed")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("regret-harness", help="adversarial regret against the strategy bounds")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--T", type=int, default=400)
    p.add_argument("--strategies", nargs="+", default=list(ALIASES), choices=tuple(ALIASES))
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--checkpoints", type=int, default=10)
    p.add_argument("--output")
    p.set_defaults(func=cmd_regret)

    p = sub.add_parser("estimator-audit", help="empirical check of the advantage estimator")
    _scenario_args(p, required=False)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--pairs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--problem-seed", type=int, default=7)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--kappa", type=float, default=0.5)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("gen-scenario", help="write a scenario file")
    p.add_argument("kind", choices=("scenario1", "generated"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="file path, used as given (default: stdout)")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, StateSpaceTooLarge, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
