"""Command line entry point: ``jvcs <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from .bandits import POLICIES, Policy, arm_from_dict, estimate_d0, pilot_stats, simulate_regret
from .bayesnet import BayesianNetwork, NetworkError, validate_network
from .domain import DomainError, Scenario, VerificationProblem
from .experiment import D6_GRID, ExperimentSpec, SpecError, run_experiment, write_run_outputs
from .export import FORMATS, export_strategy, strategy_from_dict
from .oracle import backward_induction, brute_force_enumerate
from .scenarios import TEMPLATES, generate_scenario
from .search import METHODS, SearchConfig, run_search
from .tree import strategy_value

OUT_DIR_ENV = "JVCS_OUT_DIR"


def default_out_dir() -> str:
    return os.environ.get(OUT_DIR_ENV, "jvcs-out")


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--network", help="network JSON file")
    p.add_argument("--scenario", help="scenario JSON file (needs --network)")
    p.add_argument("--template", choices=TEMPLATES, help="generate the scenario in memory instead")
    p.add_argument("--scenario-seed", type=int, default=0, help="seed for --template")


def _problem(args) -> VerificationProblem:
    if args.network and args.scenario:
        net = BayesianNetwork.load(args.network)
        return VerificationProblem(Scenario.load(args.scenario, net))
    if args.template:
        return VerificationProblem(generate_scenario(args.template, args.scenario_seed))
    raise SystemExit("give --network and --scenario, or --template")


def _out(args) -> Path:
    out = Path(args.out_dir or default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args) -> int:
    if args.spec:
        spec = ExperimentSpec.from_file(args.spec)
        print(f"experiment spec ok: {len(spec.runs())} runs")
        return 0
    net = BayesianNetwork.load(args.network)
    validate_network(net)
    msg = f"network ok: {len(net.parameters())} parameters, {len(net.observables())} observables"
    if args.scenario:
        sc = Scenario.load(args.scenario, net)
        msg += f"; scenario ok: {len(sc.vas)} VAs, {len(sc.cas)} CAs, {len(sc.targets)} targets"
    print(msg)
    return 0


def cmd_generate(args) -> int:
    sc = generate_scenario(args.template, args.seed)
    out = _out(args)
    stem = f"{args.template}-{args.seed}"
    sc.network.save(out / f"{stem}_network.json")
    sc.save(out / f"{stem}_scenario.json")
    print(out / f"{stem}_network.json")
    print(out / f"{stem}_scenario.json")
    return 0


def _search_config(args) -> SearchConfig:
    overrides = {
        k: getattr(args, k)
        for k in ("d1", "d2", "d3", "d6", "d7", "d8", "d9", "d10", "unknown_value",
                  "max_depth", "rfr_period", "rfr_trees", "rfr_percentile")
        if getattr(args, k) is not None
    }
    return SearchConfig(
        method=args.method,
        budget=args.budget,
        seed=args.seed,
        trace_every=args.trace_every,
        literal_failure_cost=args.literal_failure_cost,
        known_terminals=not args.unknown_terminals,
        **overrides,
    )


def cmd_plan(args) -> int:
    problem = _problem(args)
    config = _search_config(args)
    prior = None
    if config.method == "UCBRB2" and args.dump_models:
        from .forest import RFRPrior

        prior = RFRPrior(problem, config.rfr_period, config.rfr_trees, config.rfr_percentile,
                         seed=config.seed, dump_dir=args.dump_models)
    result = run_search(problem, config, prior=prior)
    out = _out(args)
    stem = f"{config.method}_seed{config.seed}"
    write_run_outputs(out, stem, problem, result)
    print(f"{config.method} best value {result.best_value:.6f} "
          f"({result.runtime:.1f}s, {config.budget} trees) -> {out}/{stem}_*")
    return 0


def cmd_oracle(args) -> int:
    problem = _problem(args)
    start = time.monotonic()
    if args.brute_force:
        tree, value = brute_force_enumerate(problem, args.depth_cap)
        states = None
    else:
        table = backward_induction(problem)
        tree, value, states = table.strategy(problem), table.value, len(table)
    elapsed = time.monotonic() - start
    out = _out(args)
    (out / "oracle_strategy.json").write_bytes(export_strategy(problem, tree, "json"))
    (out / "oracle_strategy.dot").write_bytes(export_strategy(problem, tree, "dot"))
    report = {"value": value, "states": states, "wall_time": round(elapsed, 3),
              "first_action": problem.action_name(tree.action) if tree.action else None}
    print(json.dumps(report))
    return 0


def cmd_regret_sim(args) -> int:
    arms = [arm_from_dict(d) for d in json.loads(args.arms)]
    d0 = args.d0
    if d0 is None:
        d0 = estimate_d0(pilot_stats(arms, args.pilot, seed=args.seed))
    policy = Policy(args.policy, d0=d0, d1=args.d1, d2=args.d2, d3=args.d3, d4=args.d4,
                    alpha=args.alpha)
    ck = [int(x) for x in args.checkpoints.split(",")] if args.checkpoints else None
    curve = simulate_regret(policy, arms, args.horizon, args.replications, args.seed, ck)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["n", "cumulative_regret", "stderr"] + [f"count_{k}" for k in range(len(arms))])
        for i, (n, regret, counts) in enumerate(curve.rows()):
            w.writerow([n, repr(regret), repr(float(curve.stderr[i]))] + [repr(c) for c in counts])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.from_file(
        args.spec, out_dir=args.out_dir or None, jobs=args.jobs,
        d6_grid=list(D6_GRID) if args.d6_grid else None,
    )
    rows = run_experiment(spec)
    for r in rows:
        print(f"{r.method:>18} seed {r.seed}: {r.expected_value:.2f} ({r.runtime:.1f}s)")
    return 0


def cmd_export(args) -> int:
    problem = _problem(args)
    tree = strategy_from_dict(problem, json.loads(Path(args.strategy).read_text()))
    data = export_strategy(problem, tree, args.format)
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())
    if args.value:
        print(f"strategy value {strategy_value(problem, tree):.6f}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jvcs", description="Verification-correction strategy planning.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check network/scenario files or an experiment spec")
    p.add_argument("--network")
    p.add_argument("--scenario")
    p.add_argument("--spec")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="write a seeded scenario as network + scenario files")
    p.add_argument("--template", choices=TEMPLATES, default="small")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("plan", help="tree search for a strategy")
    _add_problem_args(p)
    p.add_argument("--method", choices=METHODS, default="UCBRB1")
    p.add_argument("--budget", type=int, default=5000, help="sample trees")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-every", type=int, default=50)
    p.add_argument("--out-dir")
    for name in ("d1", "d2", "d3", "d6", "d7", "d8", "unknown-value", "rfr-percentile"):
        p.add_argument(f"--{name}", type=float)
    for name in ("d9", "d10", "max-depth", "rfr-period", "rfr-trees"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--literal-failure-cost", action="store_true",
                   help="charge the failure cost unweighted during selection")
    p.add_argument("--unknown-terminals", action="store_true",
                   help="score unvisited terminal states by --unknown-value, not their revenue")
    p.add_argument("--dump-models", metavar="DIR", help="write each UCBRB2 forest as JSON")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("oracle", help="exact optimum by backward induction")
    _add_problem_args(p)
    p.add_argument("--brute-force", action="store_true", help="enumerate strategies (tiny only)")
    p.add_argument("--depth-cap", type=int, default=6)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("regret-sim", help="bandit regret simulation")
    p.add_argument("--policy", choices=POLICIES, default="UCBRB")
    p.add_argument("--arms", required=True,
                   help='JSON list, e.g. \'[{"kind":"uniform","a":0,"b":0.5}]\'')
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--replications", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoints", help="comma-separated play counts to report")
    p.add_argument("--d0", type=float, help="default: estimated from a pilot run")
    p.add_argument("--pilot", type=int, default=20, help="pilot plays per arm for D0")
    p.add_argument("--d1", type=float, default=0.5)
    p.add_argument("--d2", type=float, default=0.5)
    p.add_argument("--d3", type=float, default=1.0)
    p.add_argument("--d4", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_regret_sim)

    p = sub.add_parser("experiment", help="run an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int)
    p.add_argument("--d6-grid", action="store_true", help="add the default D6 sweep")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export", help="re-render a strategy JSON")
    _add_problem_args(p)
    p.add_argument("--strategy", required=True)
    p.add_argument("--format", choices=FORMATS, default="dot")
    p.add_argument("--out")
    p.add_argument("--value", action="store_true", help="print the strategy value to stderr")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DomainError, NetworkError, SpecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
