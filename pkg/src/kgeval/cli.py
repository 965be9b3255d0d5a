"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 budget exhausted, 3 a solve did
not reach tolerance.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from collections import Counter
from pathlib import Path

from . import __version__
from .control import DEFAULT_POOL_SIZE, STRATEGIES, Strategy
from .crowd import (
    InteractiveSource,
    OracleSource,
    SimulatedSource,
    WorkerModel,
    hoeffding_bound,
    monte_carlo_error,
    worker_count,
)
from .errors import BudgetExhausted, KGEvalError
from .estimator import BUDGET, RunConfig, ablate_rules, inject_noise, run, sweep, write_sweep_csv
from .inference import SOLVERS
from .kg import KnowledgeGraph, load_triples, parse_signatures
from .rules import ground, load_rules, renumber, type_rules
from .synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger("kgeval")

EXIT_OK, EXIT_INPUT, EXIT_BUDGET, EXIT_SOLVER = 0, 1, 2, 3
SOURCES = ("oracle", "simulated", "interactive")


class UsageError(KGEvalError):
    pass


# -- config file ---------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment.  Keys use flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    values = read_config(args.config)
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        action = known.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"{args.config}: unknown key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _parse_bool(value)
        else:
            # argparse runs ``type`` on string defaults, so values stay strings
            defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- shared inputs -------------------------------------------------------

def _csv_list(kind):
    def parse(text: str):
        items = [kind(t) for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        return items
    return parse


def _budget(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError("budget must be non-negative")
    return value


def load_inputs(args) -> tuple[KnowledgeGraph, list]:
    """Graph and rules from ``--triples``/``--rules`` or ``--synthetic``."""
    if getattr(args, "synthetic", False):
        kg, rules = generate_synthetic(SyntheticSpec(n_bets=args.synthetic_size, rng_seed=args.seed))
    else:
        if args.triples is None or args.rules is None:
            raise UsageError("need --triples and --rules (or --synthetic)")
        for p in (args.triples, args.rules):
            if not Path(p).is_file():
                raise UsageError(f"no such file: {p}")
        kg = load_triples(args.triples)
        with open(args.rules, encoding="utf-8") as fh:
            sigs = parse_signatures(fh, source=str(args.rules))
        kg = kg.with_signatures(sigs)
        rules = load_rules(args.rules, kg)
    if getattr(args, "type_rules", False):
        rules = renumber(list(rules) + type_rules(kg))
    return kg, rules


def _add_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--triples", type=Path, help="tab-separated triples file")
    p.add_argument("--rules", type=Path, help="rules file with optional @predicate lines")
    p.add_argument("--type-rules", action="store_true",
                   help="add type rules generated from predicate signatures")
    p.add_argument("--synthetic", action="store_true", help="use a generated sports graph instead of files")
    p.add_argument("--synthetic-size", type=int, default=SyntheticSpec.n_bets)
    p.add_argument("--config", type=Path, help="key = value file; flags given on the command line win")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--source", choices=SOURCES, default="oracle")
    p.add_argument("--worker-accuracy", type=float, default=0.75)
    p.add_argument("--workers-per-task", type=int, default=None,
                   help="fixed redundancy for simulated workers (default: from the budget)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--seed-size", type=int, default=50)
    p.add_argument("--budget", type=_budget, default=math.inf)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.002)
    p.add_argument("--window-k", type=int, default=9)
    p.add_argument("--acc-scale", type=float, default=100.0)
    p.add_argument("--pool-size", type=int, default=DEFAULT_POOL_SIZE,
                   help="candidates scored per greedy step; 0 scores every unevaluated BET")
    p.add_argument("--solver", choices=SOLVERS, default="pgd")
    p.add_argument("--max-queries", type=int, default=None)
    p.add_argument("--until-coverage", action="store_true",
                   help="ignore the convergence test and run until every BET is covered")
    p.add_argument("--no-normalize", dest="normalize", action="store_false")
    p.add_argument("--out", type=Path, default=Path("out"))


def run_config(args, kind: str, seed: int) -> RunConfig:
    strategy = Strategy(kind, rng_seed=seed, pool_size=args.pool_size or None)
    return RunConfig(
        seed_size=args.seed_size, tau=args.tau, window_k=args.window_k, alpha=args.alpha,
        acc_scale=args.acc_scale, budget=args.budget, strategy=strategy, rng_seed=seed,
        gamma=args.gamma, solver=args.solver, normalize=args.normalize,
        max_queries=args.max_queries, until_coverage=args.until_coverage,
    )


def make_source(args, kg: KnowledgeGraph, seed: int):
    if args.source == "oracle":
        return OracleSource(kg)
    if args.source == "simulated":
        return SimulatedSource(kg, WorkerModel(args.worker_accuracy, seed), args.workers_per_task)
    audit = args.out / "audit.jsonl"
    args.out.mkdir(parents=True, exist_ok=True)
    return InteractiveSource(kg, audit_path=audit)


# -- commands ------------------------------------------------------------

def cmd_ground(args) -> int:
    kg, rules = load_inputs(args)
    ecg = ground(kg, rules)
    hist = Counter(int(d) for d in ecg.degrees)
    print(f"{ecg.n_bets} BETs, {len(ecg)} constraints")
    for d in sorted(hist):
        print(f"degree {d}: {hist[d]}")
    if args.ecg_json is not None:
        ecg.dump(args.ecg_json, rules)
    return EXIT_OK


def cmd_run(args) -> int:
    kg, rules = load_inputs(args)
    ecg = ground(kg, rules)
    cfg = run_config(args, args.strategy, args.seed)
    report = run(kg, ecg, cfg, make_source(args, kg, args.seed))
    report.write(args.out)
    print(f"estimate {report.final_estimate:.4f} after {report.queries_used} queries "
          f"({report.stop_reason})")
    if report.stop_reason == BUDGET:
        return EXIT_BUDGET
    if report.solver_failures:
        log.warning("%d solves stopped before reaching tolerance", report.solver_failures)
        return EXIT_SOLVER
    return EXIT_OK


def _ablation(text: str) -> tuple[int, ...]:
    text = text.strip()
    if text in ("", "none", "-"):
        return ()
    return tuple(int(t) for t in text.split(","))


def cmd_sweep(args) -> int:
    if not args.strategies or not args.seeds:
        raise UsageError("sweep needs at least one strategy and one seed")
    ladder = [_ablation(t) for t in args.ablations.split(";")]

    def cells():
        for seed in args.seeds:
            args.seed = seed
            kg, rules = load_inputs(args)
            for flip in args.flip_fractions:
                noisy = inject_noise(kg, flip, seed) if flip else kg
                for drop in ladder:
                    ecg = ground(noisy, ablate_rules(rules, drop))
                    label = f"flip={flip:g};drop={','.join(map(str, drop)) or 'none'}"
                    for kind in args.strategies:
                        yield label, noisy, ecg, run_config(args, kind, seed)

    rows = sweep(cells(), lambda kg, cfg: make_source(args, kg, cfg.rng_seed))
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, args.out / "sweep.csv")
    curves = args.out / "curves"
    curves.mkdir(exist_ok=True)
    for i, row in enumerate(rows):
        rep = row.get("report")
        if rep is None:
            continue
        with open(curves / f"cell{i:03d}.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["queries", "fraction_inferred", "estimate"])
            est = dict(rep.estimate_curve)
            w.writerows((q, repr(f), repr(est[q]) if q in est else "") for q, f in rep.coverage_curve)
    failed = [r for r in rows if r["error"]]
    for r in failed:
        log.error("cell %s/%s/%s failed: %s", r["label"], r["strategy"], r["seed"], r["error"])
    print(f"{len(rows)} cells, {len(failed)} failed")
    return EXIT_INPUT if failed and len(failed) == len(rows) else EXIT_OK


def cmd_budget_sim(args) -> int:
    if args.trials < 1:
        raise UsageError("trials must be at least 1")
    WorkerModel(args.worker_accuracy)  # rejects adversarial workers
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in range(args.steps):
        i_t = max(1, int(round(args.i_max * args.gamma ** t)))
        w = max(1, worker_count(args.budget, args.cost, args.gamma, i_t, args.i_max))
        err, se = monte_carlo_error(args.worker_accuracy, w, args.trials, args.seed)
        rows.append((i_t, w, err, hoeffding_bound(w, args.worker_accuracy), se))
    with open(args.out / "budget_sim.csv", "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["i_t", "w", "empirical_err", "bound", "se"])
        out.writerows((i, w, repr(e), repr(b), repr(s)) for i, w, e, b, s in rows)
    above = sum(e > b + 3 * s for _, _, e, b, s in rows)
    print(f"{len(rows)} rows, {above} above bound + 3 SE")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(n_bets=args.size, target_gold_acc=args.gold_accuracy, rng_seed=args.seed)
    kg, rules = generate_synthetic(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    kg.write(args.out / "triples.tsv")
    with open(args.out / "rules.txt", "w", encoding="utf-8", newline="\n") as fh:
        for name in sorted(kg.predicates):
            p = kg.predicates[name]
            flag = " functional" if p.functional else ""
            fh.write(f"@predicate {name}({p.domain}, {p.range}){flag}\n")
        for r in rules:
            fh.write(f"{r}\n")
    print(f"{len(kg)} BETs, {len(rules)} rules, gold accuracy {kg.gold_array().mean():.4f}")
    return EXIT_OK


def cmd_inject_noise(args) -> int:
    kg, _ = load_inputs(args)
    noisy = inject_noise(kg, args.flip_fraction, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    noisy.write(args.out)
    flipped = sum(a.gold != b.gold for a, b in zip(kg, noisy))
    print(f"flipped {flipped} of {len(kg)} BETs")
    return EXIT_OK


# -- entry point ---------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="kgeval", description="Estimate knowledge-graph accuracy with few queries.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)
    sub = {}

    p = sub["ground"] = subs.add_parser("ground", help="ground rules and summarise the coupling graph")
    _add_inputs(p)
    p.add_argument("--seed", type=int, default=0, help="synthetic graph seed")
    p.add_argument("--ecg-json", type=Path)
    p.set_defaults(func=cmd_ground)

    p = sub["run"] = subs.add_parser("run", help="one estimation run")
    _add_inputs(p)
    _add_run_flags(p)
    p.add_argument("--strategy", choices=STRATEGIES, default="greedy")
    p.set_defaults(func=cmd_run)

    p = sub["sweep"] = subs.add_parser("sweep", help="cross product of strategies, seeds, noise and ablations")
    _add_inputs(p)
    _add_run_flags(p)
    p.add_argument("--strategies", type=_csv_list(str), default=["greedy", "random", "maxDegree",
                                                                  "independentCascade"])
    p.add_argument("--seeds", type=_csv_list(int), default=[0])
    p.add_argument("--flip-fractions", type=_csv_list(float), default=[0.0])
    p.add_argument("--ablations", default="none", help="';'-separated body lengths to drop, e.g. 'none;3;3,2'")
    p.set_defaults(func=cmd_sweep)

    p = sub["budget-sim"] = subs.add_parser("budget-sim", help="majority-vote error against the Hoeffding bound")
    p.add_argument("--worker-accuracy", type=float, default=0.75)
    p.add_argument("--budget", type=_budget, default=1000.0)
    p.add_argument("--cost", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--i-max", type=int, default=100)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_budget_sim)

    p = sub["gen-synthetic"] = subs.add_parser("gen-synthetic", help="write a synthetic graph and its rules")
    p.add_argument("--size", type=int, default=SyntheticSpec.n_bets)
    p.add_argument("--gold-accuracy", type=float, default=SyntheticSpec.target_gold_acc)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub["inject-noise"] = subs.add_parser("inject-noise", help="corrupt a fraction of true beliefs")
    _add_inputs(p)
    p.add_argument("--flip-fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output triples file")
    p.set_defaults(func=cmd_inject_noise)
    return parser, sub


def main(argv=None) -> int:
    parser, sub = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None) is not None:
            args = _apply_config(parser, sub[args.command], argv)
    except UsageError as exc:
        print(f"kgeval: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BudgetExhausted as exc:
        print(f"kgeval: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (KGEvalError, ValueError, OSError) as exc:
        print(f"kgeval: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
