"""Command-line interface: ``mixbell <subcommand> [flags]``.

Exit status: 0 on success, 1 when a bound verdict fails, 2 on usage errors
(bad flags, missing or malformed input files).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import harness
from .data import (DomainPair, SamplingDistribution, coverage_check, load_dataset,
                   load_sampling_distribution, perturb_dynamics, random_mdp, sample_dataset,
                   save_dataset)
from .mdp import (OPTIMALITY, Policy, PolicyEvaluation, exact_backup, load_mdp, optimal_q,
                  save_mdp, validate_mdp)
from .solver import SolveConfig, run_fqi

OUT_DIR_ENV = "MIXBELL_OUT_DIR"


class UsageError(Exception):
    pass


def _csv_floats(text):
    return tuple(float(x) for x in text.split(","))


def _csv_ints(text):
    return tuple(int(x) for x in text.split(","))


def _read(loader, path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    try:
        return loader(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} file {path}: {exc}") from exc


def _sa_dist(path, mdp):
    if path is None:
        return SamplingDistribution.uniform(mdp.num_states, mdp.num_actions)
    return _read(load_sampling_distribution, path, "sampling distribution")


def _check_mdp(mdp, what):
    problems = validate_mdp(mdp).problems
    if problems:
        raise UsageError(f"invalid {what}: " + "; ".join(problems))
    return mdp


def cmd_gen_mdp(args):
    if args.states < 1 or args.actions < 1:
        raise UsageError("--states and --actions must be positive")
    mdp = _check_mdp(random_mdp(args.states, args.actions, args.gamma, args.reward_bound,
                                args.seed, args.branching), "MDP (check --gamma, --reward-bound)")
    save_mdp(mdp, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_perturb(args):
    mdp = _check_mdp(_read(load_mdp, args.inp, "MDP"), "MDP")
    save_mdp(perturb_dynamics(mdp, args.epsilon, args.seed), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_collect(args):
    mdp = _read(load_mdp, args.mdp, "MDP")
    ds = sample_dataset(mdp, _sa_dist(args.sa_dist, mdp), args.n, args.seed)
    save_dataset(ds, args.out)
    cov = coverage_check(ds)
    note = "" if cov else f" ({len(cov.uncovered)} uncovered cells)"
    print(f"wrote {args.out}: {ds.size} transitions{note}")
    return 0


def cmd_solve(args):
    target = _read(load_mdp, args.target, "target MDP")
    source = _read(load_mdp, args.source, "source MDP") if args.source else target
    dataset = _read(load_dataset, args.data, "dataset")
    _check_mdp(target, "target MDP")
    _check_mdp(source, "source MDP")
    try:
        pair = DomainPair(target, source, _sa_dist(args.target_sa, target),
                          _sa_dist(args.source_sa, source))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mode = OPTIMALITY
    if args.policy:
        probs = _read(lambda p: json.loads(Path(p).read_text())["probs"], args.policy, "policy")
        mode = PolicyEvaluation(Policy(probs))
    config = SolveConfig(args.lam, args.iters, mode)
    trace = run_fqi(pair, dataset, config, q_star=optimal_q(target, mode=mode))
    if args.out:
        trace.to_csv(args.out)
    q = trace.final_q
    residual = float(np.max(np.abs(exact_backup(target, q, mode) - q)))
    print(f"final Bellman residual (target, sup norm): {residual:.3e}")
    return 0


def _load_config(args) -> harness.ExperimentConfig:
    base = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            shipped = resources.files("mixbell") / "configs" / path.name
            if not shipped.is_file():
                raise UsageError(f"config file not found: {args.config}")
            path = shipped
        try:
            base = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"cannot parse config {args.config}: {exc}") from exc
    overrides = {
        "master_seed": args.seed, "num_resamples": args.resamples,
        "worst_case_resamples": args.worst_case_resamples, "num_iterations": args.iters,
        "epsilons": args.epsilons, "n_list": args.n_list, "delta": args.delta,
        "lambda_grid": args.lambdas, "num_families": args.families,
        "eval_metric": args.metric,
        "theorems": getattr(args, "theorems", None),
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return harness.ExperimentConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def _run_dir(args, config) -> Path:
    root = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, "runs"))
    run = root / config.hash()
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(json.dumps(config.to_dict(), indent=1) + "\n")
    return run


def cmd_check_bounds(args):
    config = _load_config(args)
    run = _run_dir(args, config)
    report = harness.run_bound_checks(config, jobs=args.jobs)
    harness.emit_reports([report], run)
    for line in report.failures():
        print(f"violation: {line}", file=sys.stderr)
    print(f"{report.summary()} ({run / 'bound_report.json'})")
    return 0 if report.passed else 1


def cmd_sweep(args):
    config = _load_config(args)
    run = _run_dir(args, config)
    report = harness.sweep(config, jobs=args.jobs)
    paths = harness.emit_reports([report], run)
    trends = report.trend_summary()
    (run / "trends.json").write_text(json.dumps(trends, indent=1, sort_keys=True) + "\n")
    for axis, fractions in trends.items():
        print(axis + ": " + ", ".join(f"{k}={v:.2f}" for k, v in fractions.items()))
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def cmd_report(args):
    path = Path(args.inp)
    if not path.is_file():
        raise UsageError(f"report file not found: {path}")
    if path.suffix == ".csv":
        print(path.read_text(), end="")
        return 0
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"cannot parse report {path}: {exc}") from exc
    print(f"config {d.get('config_hash')}: {d.get('verdict', '?').upper()}")
    for name in ("theorem1", "theorem2", "theorem3"):
        if name not in d:
            continue
        section = d[name]
        rows = section["rows"]
        print(f"  {name}: {section['verdict']} ({section['violations']} of {len(rows)} rows fail)")
        for r in rows:
            if not r["pass"] or args.verbose:
                cell = ", ".join(f"{k}={r[k]}" for k in ("epsilon", "n", "lambda", "k") if k in r)
                print(f"    {'ok  ' if r['pass'] else 'FAIL'} {cell}")
    return 0


def _add_experiment_flags(p, with_theorems):
    p.add_argument("--config", help="JSON config; a bare name also searches the shipped "
                                    "configs (default.json, sweep.json)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--resamples", type=int, help="datasets per cell, M")
    p.add_argument("--worst-case-resamples", type=int,
                   help="datasets per cell for the high-probability check")
    p.add_argument("--iters", type=int, help="iterations K")
    p.add_argument("--epsilons", type=_csv_floats, help="comma-separated perturbation sizes")
    p.add_argument("--n-list", type=_csv_ints, help="comma-separated dataset sizes")
    p.add_argument("--lambdas", type=_csv_floats, help="comma-separated lambda grid")
    p.add_argument("--delta", type=float, help="confidence parameter")
    p.add_argument("--families", type=int, help="number of seeded domain families (sweep)")
    p.add_argument("--metric", choices=harness.EVAL_METRICS, help="sweep selection metric")
    if with_theorems:
        p.add_argument("--theorems", type=_csv_ints, help="subset of 1,2,3 to check")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--out-dir", help=f"output root (default: ${OUT_DIR_ENV} or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixbell", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen-mdp", help="write a random MDP", formatter_class=fmt)
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--actions", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--reward-bound", type=float, default=1.0)
    p.add_argument("--branching", type=int, default=None, help="successors per row")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_mdp)

    p = sub.add_parser("perturb", help="mix transitions toward a random tensor",
                       formatter_class=fmt)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("collect", help="sample a transition dataset", formatter_class=fmt)
    p.add_argument("--mdp", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sa-dist", default=None, help="sampling distribution JSON (uniform if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("solve", help="run weighted fitted Q-iteration", formatter_class=fmt)
    p.add_argument("--target", required=True)
    p.add_argument("--source", default=None, help="source MDP (the target if omitted)")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--target-sa", default=None)
    p.add_argument("--source-sa", default=None)
    p.add_argument("--policy", default=None,
                   help="policy JSON {\"probs\": ...}; switches to policy evaluation")
    p.add_argument("--out", default=None, help="trace CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-bounds", help="Monte-Carlo bound validation", formatter_class=fmt)
    _add_experiment_flags(p, with_theorems=True)
    p.set_defaults(func=cmd_check_bounds)

    p = sub.add_parser("sweep", help="lambda sweep over perturbations and dataset sizes",
                       formatter_class=fmt)
    _add_experiment_flags(p, with_theorems=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="pretty-print a saved report", formatter_class=fmt)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--verbose", action="store_true", help="list passing rows too")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mixbell {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (harness.CoverageError, ValueError) as exc:
        print(f"mixbell {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
