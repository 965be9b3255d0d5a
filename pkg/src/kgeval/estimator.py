"""The accuracy-estimation loop and its experiment harnesses.

:func:`run` seeds the evaluated set with uniformly random crowd queries,
then alternates selection, crowd evaluation and inference.  The covered set
``Q`` holds every evaluated or confidently inferred BET, and the running
estimate is the mean label over ``Q``.  The loop stops when the estimate
stabilises, when ``Q`` covers the whole graph, or when the budget runs out.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .control import (
    GREEDY,
    INDEPENDENT_CASCADE,
    EvaluationState,
    SelectionTrace,
    Strategy,
    baseline_select,
    cascade_fire,
    covered_gain,
    greedy_select,
)
from .crowd import BudgetPlan
from .errors import BudgetExhausted, GoldIncomplete, SelectionExhausted
from .inference import UNDECIDED, InferenceConfig, InferenceResult, class_mass_normalize, map_solve, threshold_labels
from .kg import BET, ISA, KnowledgeGraph
from .rules import ECG, Rule

CONVERGED = "converged"
COVERAGE = "coverage"
BUDGET = "budget"
MAX_QUERIES = "max_queries"


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one estimation run.

    ``alpha`` is compared with the variance of the last ``window_k + 1``
    estimates after multiplying them by ``acc_scale`` (100 means the
    estimates are read in percentage points).
    """

    seed_size: int = 50
    tau: float = 0.8
    window_k: int = 9
    alpha: float = 0.002
    acc_scale: float = 100.0
    budget: float = math.inf
    strategy: Strategy = Strategy()
    rng_seed: int = 0
    gamma: float = 0.5
    solver_tol: float = 1e-6
    max_iters: int = 10000
    solver: str = "pgd"
    normalize: bool = True
    max_queries: int | None = None
    until_coverage: bool = False
    workers: int | None = None

    def __post_init__(self):
        if self.seed_size < 0:
            raise ValueError("seed size must be non-negative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.window_k < 1:
            raise ValueError("window k must be at least 1")
        if not self.acc_scale > 0:
            raise ValueError("accuracy scale must be positive")
        if not self.budget >= 0:
            raise ValueError("budget must be non-negative")

    @property
    def inference(self) -> InferenceConfig:
        return InferenceConfig(self.tau, self.solver_tol, self.max_iters, self.solver)

    def with_seed(self, seed: int) -> "RunConfig":
        """Same config with both the seed-set and the strategy generator reseeded."""
        return replace(self, rng_seed=seed, strategy=replace(self.strategy, rng_seed=seed))


@dataclass
class RunReport:
    strategy: str
    rng_seed: int
    final_estimate: float
    queries_used: int
    seed_queries: int
    spend: float
    stop_reason: str
    covered: int
    n_bets: int
    undecided: int
    acc_history: list[float]
    coverage_curve: list[tuple[int, float]]
    gold_accuracy: float | None = None
    delta_overall: float | None = None
    delta_predicate: float | None = None
    delta_overall_q: float | None = None
    per_predicate: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)
    solver_failures: int = 0
    trace: SelectionTrace = field(default_factory=SelectionTrace, repr=False)

    @property
    def loop_queries(self) -> int:
        return self.queries_used - self.seed_queries

    @property
    def converged(self) -> bool:
        return self.stop_reason in (CONVERGED, COVERAGE)

    @property
    def estimate_curve(self) -> list[tuple[int, float]]:
        """``(queries so far, estimate)`` after the seed set and after each step."""
        return [(self.seed_queries + i, a) for i, a in enumerate(self.acc_history)]

    def stable_reach(self, tol: float = 0.01) -> int | None:
        """Fewest queries after which every later estimate is within ``tol`` of gold.

        ``None`` when gold is unknown or the final estimate is still off.
        """
        if self.gold_accuracy is None:
            return None
        reach = None
        for q, a in reversed(self.estimate_curve):
            if abs(a - self.gold_accuracy) > tol:
                break
            reach = q
        return reach

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.rng_seed,
            "final_estimate": self.final_estimate,
            "gold_accuracy": self.gold_accuracy,
            "delta_overall": self.delta_overall,
            "delta_predicate": self.delta_predicate,
            "delta_overall_covered": self.delta_overall_q,
            "queries_used": self.queries_used,
            "seed_queries": self.seed_queries,
            "loop_queries": self.loop_queries,
            "spend": round(self.spend, 10),
            "stop_reason": self.stop_reason,
            "covered": self.covered,
            "bets": self.n_bets,
            "undecided": self.undecided,
            "solver_failures": self.solver_failures,
            "acc_history": self.acc_history,
            "stable_reach": self.stable_reach(),
            "coverage_curve": [list(p) for p in self.coverage_curve],
            "per_predicate": {p: {"gold": g, "estimated": e} for p, (g, e) in self.per_predicate.items()},
            "chosen": self.trace.chosen,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(out / "coverage.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["queries", "fraction_inferred"])
            w.writerows((q, repr(f)) for q, f in self.coverage_curve)
        with open(out / "predicates.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["predicate", "gold", "estimated", "gap"])
            for p, (g, e) in self.per_predicate.items():
                gap = "" if g is None or e is None else repr(abs(g - e))
                w.writerow([p, "" if g is None else repr(g), "" if e is None else repr(e), gap])
        self.trace.write_csv(out / "trace.csv")


def converged(history: Sequence[float], k: int, alpha: float) -> bool:
    """True when the last ``k + 1`` estimates have population variance below ``alpha``."""
    if len(history) < k + 1:
        return False
    return float(np.var(np.asarray(history[-(k + 1):], dtype=float))) < alpha


def _soft_labels(labels) -> np.ndarray:
    lab = np.asarray(labels, dtype=float)
    return np.where(lab == UNDECIDED, 0.5, lab)


def delta_overall(kg: KnowledgeGraph, labels) -> float:
    """``|gold accuracy - estimated accuracy|`` over the whole graph.

    Undecided BETs (label -1) contribute 0.5 to the estimate.
    """
    gold = kg.gold_array()
    if len(gold) == 0:
        raise GoldIncomplete("gold incomplete: empty graph")
    est = _soft_labels(labels)
    if est.shape != gold.shape:
        raise ValueError(f"need one label per BET, got {est.shape[0]} for {gold.shape[0]}")
    return float(abs(gold.mean() - est.mean()))


def per_predicate(kg: KnowledgeGraph, labels) -> dict[str, tuple[float, float]]:
    gold = kg.gold_array()
    est = _soft_labels(labels)
    groups = kg.by_predicate()
    if not groups:
        raise ValueError("no predicates to average over")
    return {p: (float(gold[ids].mean()), float(est[ids].mean())) for p, ids in sorted(groups.items())}


def delta_predicate(kg: KnowledgeGraph, labels) -> float:
    """Mean over predicates of the per-predicate accuracy gap."""
    rows = per_predicate(kg, labels)
    return float(np.mean([abs(g - e) for g, e in rows.values()]))


def _label_vector(n: int, covered: dict[int, int]) -> np.ndarray:
    lab = np.full(n, UNDECIDED, dtype=np.int8)
    for h, v in covered.items():
        lab[h] = v
    return lab


def _normalized(ecg: ECG, res: InferenceResult, q1: float, cfg: InferenceConfig,
                evidence: dict[int, int]) -> InferenceResult:
    # BETs the evidence never reached sit at the neutral start value; they are
    # held fixed here, otherwise a skewed seed would label all of them at once
    untouched = np.isclose(res.scores, 0.5, atol=1e-6, rtol=0.0)
    try:
        scores = class_mass_normalize(res.scores, q1, res.clamp_mask | untouched)
    except ValueError:
        return res
    labels, _ = threshold_labels(scores, cfg.tau, evidence)
    return replace(res, scores=scores, labels=labels)


def run(kg: KnowledgeGraph, ecg: ECG, cfg: RunConfig, source,
        on_step: Callable[[EvaluationState], None] | None = None) -> RunReport:
    """Estimate the accuracy of ``kg`` by querying ``source``.

    ``source`` must offer ``answer(h, plan, i_t) -> (label, spend)`` and
    ``lookahead(h, scores) -> label``; see :mod:`kgeval.crowd`.

    Raises
    ------
    BudgetExhausted
        If the budget cannot pay for the seed set, or runs out before the
        first estimate exists.
    """
    n = len(kg)
    if ecg.n_bets != n:
        raise ValueError(f"ECG has {ecg.n_bets} BETs but the graph has {n}")
    icfg = cfg.inference
    strategy = cfg.strategy
    plan = BudgetPlan(cfg.budget, unit_cost=_unit_cost(kg), gamma=cfg.gamma)
    state = EvaluationState(n)
    trace = SelectionTrace()
    curve: list[tuple[int, float]] = [(0, 0.0)]
    failures = 0

    seed_rng = np.random.default_rng(cfg.rng_seed)
    seed = seed_rng.choice(n, size=min(cfg.seed_size, n), replace=False).tolist() if n else []
    seed_cost = sum(kg[h].cost for h in seed)
    if seed_cost > cfg.budget + 1e-9:
        raise BudgetExhausted(f"budget exhausted: seed set of {len(seed)} costs {seed_cost:.4g}, "
                              f"budget is {cfg.budget:.4g}")
    for h in seed:
        label, _ = source.answer(h, plan, None)
        state.record(h, label)
    queries = len(seed)

    if seed:
        if strategy.uses_inference:
            res = map_solve(ecg, state.evidence, icfg)
            failures += not res.converged
            if cfg.normalize:
                q1 = sum(state.evidence.values()) / len(state.evidence)
                res = _normalized(ecg, res, q1, icfg, state.evidence)
            state.absorb(res)
        state.acc_history.append(state.accuracy())
        curve.append((queries, len(state.covered) / n))

    pick_rng = np.random.default_rng(strategy.rng_seed)
    stop = None
    while stop is None:
        if len(state.covered) == n:
            stop = COVERAGE
            break
        if cfg.max_queries is not None and queries - len(seed) >= cfg.max_queries:
            stop = MAX_QUERIES
            break
        if not cfg.until_coverage and converged([a * cfg.acc_scale for a in state.acc_history],
                                                cfg.window_k, cfg.alpha):
            stop = CONVERGED
            break

        before = len(state.covered)
        scores = state.result.scores if state.result is not None else None
        try:
            if strategy.kind == GREEDY:
                pick = greedy_select(ecg, state, icfg, lambda h: source.lookahead(h, scores),
                                     strategy.pool_size, workers=cfg.workers)
                h, guess, pool = pick.bet, pick, pick.pool_size
            else:
                h = baseline_select(strategy, ecg, state, pick_rng)
                guess, pool = None, 1
                if strategy.uses_inference:
                    ev = dict(state.evidence)
                    label = int(source.lookahead(h, scores))
                    ev[h] = label
                    r = map_solve(ecg, ev, icfg)
                    guess = _Guess(covered_gain(state.covered_mask(), r), r, label)
        except SelectionExhausted:
            stop = COVERAGE
            break

        i_t = max(1, guess.gain - before) if guess is not None else 1
        try:
            label, _ = source.answer(h, plan, i_t)
        except BudgetExhausted:
            if not state.covered:
                raise
            stop = BUDGET
            break
        state.record(h, label)
        queries += 1
        state.step += 1

        if strategy.uses_inference:
            if guess is not None and guess.label == label:
                res = guess.result
            else:
                res = map_solve(ecg, state.evidence, icfg)
            failures += not res.converged
            state.absorb(res)
        elif strategy.kind == INDEPENDENT_CASCADE:
            cascade_fire(ecg, state.covered, h)

        state.acc_history.append(state.accuracy())
        curve.append((queries, len(state.covered) / n))
        trace.add(h, len(state.covered), pool, label)
        if on_step is not None:
            on_step(state)

    state.spend = plan.spent
    return _report(kg, cfg, state, curve, trace, queries, len(seed), stop, failures)


@dataclass
class _Guess:
    gain: int
    result: InferenceResult
    label: int


def _unit_cost(kg: KnowledgeGraph) -> float:
    costs = kg.costs()
    positive = costs[costs > 0]
    return float(positive.min()) if len(positive) else 0.01


def _report(kg, cfg, state, curve, trace, queries, seed_queries, stop, failures) -> RunReport:
    n = len(kg)
    labels = _label_vector(n, state.covered)
    report = RunReport(
        strategy=cfg.strategy.kind,
        rng_seed=cfg.rng_seed,
        final_estimate=state.accuracy() if state.covered else float("nan"),
        queries_used=queries,
        seed_queries=seed_queries,
        spend=state.spend,
        stop_reason=stop,
        covered=len(state.covered),
        n_bets=n,
        undecided=int(np.count_nonzero(labels == UNDECIDED)),
        acc_history=list(state.acc_history),
        coverage_curve=curve,
        solver_failures=failures,
        trace=trace,
    )
    if kg.has_complete_gold and n:
        gold = kg.gold_array()
        report.gold_accuracy = float(gold.mean())
        report.delta_overall = delta_overall(kg, labels)
        report.delta_predicate = delta_predicate(kg, labels)
        report.delta_overall_q = abs(report.gold_accuracy - report.final_estimate) if state.covered else None
        report.per_predicate = per_predicate(kg, labels)
    else:
        est = _soft_labels(labels)
        report.per_predicate = {p: (None, float(est[ids].mean())) for p, ids in sorted(kg.by_predicate().items())}
    return report


def ablate_rules(rules: Iterable[Rule], drop_body_lengths: Iterable[int]) -> list[Rule]:
    """Rules whose body length is not in ``drop_body_lengths``."""
    drop = set(drop_body_lengths)
    return [r for r in rules if r.body_length not in drop]


def inject_noise(kg: KnowledgeGraph, flip_fraction: float, rng_seed: int) -> KnowledgeGraph:
    """Corrupt ``round(flip_fraction * n)`` true beliefs of functional predicates.

    Each chosen belief keeps its subject and predicate but gets a different,
    type-compatible object (an entity already used as an object of the same
    predicate, or an entity typed with the predicate's range) and is marked
    false.  The gold accuracy drops by exactly ``flipped / n``.
    """
    if not 0.0 <= flip_fraction <= 1.0:
        raise ValueError(f"flip fraction must lie in [0, 1], got {flip_fraction}")
    kg.gold_array()
    n = len(kg)
    want = int(round(flip_fraction * n))
    if want == 0:
        return kg
    functional = {p.name for p in kg.predicates.values() if p.functional and p.name != ISA}
    eligible = [b.id for b in kg if b.gold == 1 and b.predicate in functional]
    if len(eligible) < want:
        raise ValueError(f"not enough eligible BETs: need {want}, have {len(eligible)} "
                         f"(shortfall {want - len(eligible)})")

    typed: dict[str, set[str]] = {}
    objects: dict[str, set[str]] = {}
    for b in kg:
        if b.predicate == ISA:
            typed.setdefault(b.object, set()).add(b.subject)
        else:
            objects.setdefault(b.predicate, set()).add(b.object)

    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(eligible).tolist()
    triples = {b.triple for b in kg}
    bets = list(kg.bets)
    flipped = 0
    for h in order:
        if flipped == want:
            break
        b = bets[h]
        pred = kg.predicates[b.predicate]
        pool = set(objects.get(b.predicate, ()))
        if pred.range is not None:
            pool |= typed.get(pred.range, set())
        pool = sorted(e for e in pool if e != b.object and (b.subject, b.predicate, e) not in triples)
        if not pool:
            continue
        obj = pool[int(rng.integers(len(pool)))]
        triples.discard(b.triple)
        triples.add((b.subject, b.predicate, obj))
        bets[h] = BET(b.id, b.subject, b.predicate, obj, b.cost, 0)
        flipped += 1
    if flipped < want:
        raise ValueError(f"not enough eligible BETs with a type-compatible replacement: "
                         f"need {want}, managed {flipped} (shortfall {want - flipped})")
    return kg.replace_bets(bets)


SWEEP_FIELDS = ["strategy", "seed", "label", "queries", "loop_queries", "stop_reason", "final_estimate",
                "gold_accuracy", "delta_overall", "delta_predicate", "delta_overall_covered", "coverage", "stable_reach",
                "error"]


def sweep(cells: Iterable[tuple[str, KnowledgeGraph, ECG, RunConfig]], make_source) -> list[dict]:
    """Run every ``(label, kg, ecg, cfg)`` cell and collect one row per cell.

    A failing cell records its error and the sweep carries on.
    """
    rows = []
    for label, kg, ecg, cfg in cells:
        row = {"strategy": cfg.strategy.kind, "seed": cfg.rng_seed, "label": label}
        try:
            rep = run(kg, ecg, cfg, make_source(kg, cfg))
        except Exception as exc:  # recorded per cell
            row.update({k: "" for k in SWEEP_FIELDS if k not in row})
            row["error"] = f"{type(exc).__name__}: {exc}"
        else:
            row.update({
                "queries": rep.queries_used,
                "loop_queries": rep.loop_queries,
                "stop_reason": rep.stop_reason,
                "final_estimate": rep.final_estimate,
                "gold_accuracy": rep.gold_accuracy,
                "delta_overall": rep.delta_overall,
                "delta_predicate": rep.delta_predicate,
                "delta_overall_covered": rep.delta_overall_q,
                "coverage": rep.covered / rep.n_bets if rep.n_bets else 0.0,
                "stable_reach": rep.stable_reach(),
                "error": "",
            })
            row["report"] = rep
        rows.append(row)
    return rows


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
