"""Query selection: which BET goes to the crowd next.

The greedy mechanism picks the BET whose (hypothetical) evaluation yields
the largest covered set.  Baselines pick randomly, by ECG degree, or
randomly with one-hop cascade propagation instead of full inference.  The
brute-force helpers at the bottom are exponential oracles for small graphs.
"""
from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import SelectionExhausted
from .inference import UNDECIDED, InferenceConfig, InferenceResult, map_solve, potential
from .rules import ECG

GREEDY = "greedy"
RANDOM = "random"
MAX_DEGREE = "maxDegree"
INDEPENDENT_CASCADE = "independentCascade"
RANDOM_PLUS_INFERENCE = "randomPlusInference"
MAX_DEGREE_PLUS_INFERENCE = "maxDegreePlusInference"
STRATEGIES = (GREEDY, RANDOM, MAX_DEGREE, INDEPENDENT_CASCADE, RANDOM_PLUS_INFERENCE,
              MAX_DEGREE_PLUS_INFERENCE)
INFERENCE_STRATEGIES = frozenset({GREEDY, RANDOM_PLUS_INFERENCE, MAX_DEGREE_PLUS_INFERENCE})

DEFAULT_POOL_SIZE = 5


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("KGEVAL_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Strategy:
    kind: str = GREEDY
    rng_seed: int = 0
    pool_size: int | None = DEFAULT_POOL_SIZE

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {', '.join(STRATEGIES)}")
        if self.pool_size is not None and self.pool_size < 1:
            raise ValueError("candidate pool size must be at least 1")

    @property
    def uses_inference(self) -> bool:
        return self.kind in INFERENCE_STRATEGIES


@dataclass
class EvaluationState:
    """Crowd evidence plus the covered set Q with its current labels."""

    n_bets: int
    evidence: dict[int, int] = field(default_factory=dict)
    covered: dict[int, int] = field(default_factory=dict)
    result: InferenceResult | None = None
    acc_history: list[float] = field(default_factory=list)
    spend: float = 0.0
    step: int = 0

    def covered_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_bets, dtype=bool)
        if self.covered:
            mask[list(self.covered)] = True
        return mask

    def uncovered(self) -> list[int]:
        return [h for h in range(self.n_bets) if h not in self.covered]

    def unevaluated(self) -> list[int]:
        return [h for h in range(self.n_bets) if h not in self.evidence]

    def record(self, h: int, label: int) -> None:
        self.evidence[h] = int(label)
        self.covered[h] = int(label)

    def absorb(self, result: InferenceResult) -> None:
        """Merge an inference result into Q.

        Decided BETs take their newest label; BETs that fall back to
        undecided keep the last label they had.
        """
        self.result = result
        for h in result.inferable.tolist():
            self.covered[h] = int(result.labels[h])
        for h, v in self.evidence.items():
            self.covered[h] = v

    def accuracy(self) -> float:
        if not self.covered:
            return float("nan")
        return sum(self.covered.values()) / len(self.covered)


@dataclass
class Pick:
    bet: int
    gain: int
    result: InferenceResult | None = None
    label: int | None = None
    pool_size: int = 0


@dataclass
class SelectionTrace:
    chosen: list[int] = field(default_factory=list)
    gains: list[int] = field(default_factory=list)
    pool_sizes: list[int] = field(default_factory=list)
    crowd_labels: list[int] = field(default_factory=list)

    def add(self, bet, gain, pool_size, label):
        self.chosen.append(int(bet))
        self.gains.append(int(gain))
        self.pool_sizes.append(int(pool_size))
        self.crowd_labels.append(int(label))

    def rows(self):
        for i, row in enumerate(zip(self.chosen, self.pool_sizes, self.gains, self.crowd_labels), 1):
            yield (i,) + row

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "chosen_bet", "pool_size", "inferable_size", "crowd_label"])
            w.writerows(self.rows())


def open_constraints(ecg: ECG, state: EvaluationState) -> tuple[np.ndarray, np.ndarray]:
    """Per BET, how many constraints its evaluation would fire right away.

    A constraint is open when its head and exactly one body member are
    outside the covered set and every other body member is covered true.
    Evaluating that body member as true settles the head; evaluating the
    head as false settles the body member.  Returns the counts for a true
    answer and for a false answer.
    """
    n = ecg.n_bets
    if not len(ecg):
        return np.zeros(n), np.zeros(n)
    lab = np.full(n, UNDECIDED, dtype=np.int8)
    for h, v in state.covered.items():
        lab[h] = v
    uncovered = (lab == UNDECIDED).astype(float)
    n_true = ecg.body @ (lab == 1).astype(float)
    n_open = ecg.body @ uncovered
    fire = (uncovered[ecg.heads] > 0) & (n_open == 1) & (n_true == ecg.body_sizes - 1)
    if_true = (ecg.bodyT @ fire.astype(float)) * uncovered
    if_false = np.bincount(ecg.heads, weights=fire.astype(float), minlength=n)
    return if_true, if_false


def approx_candidates(ecg: ECG, state: EvaluationState, pool_size: int | None,
                      lookahead: Callable[[int], int] | None = None) -> list[int]:
    """Shortlist of uncovered BETs adjacent to the most unfulfilled constraints.

    A constraint counts for ``h`` when evaluating ``h`` with its expected
    label (``lookahead``; the better of both labels when omitted) would
    fire it onto another uncovered BET, see :func:`open_constraints`.
    Ties go to the lower BET id.
    """
    if pool_size is not None and pool_size < 1:
        raise ValueError("pool size must be at least 1")
    cands = np.flatnonzero(~state.covered_mask())
    if pool_size is None or pool_size >= len(cands):
        return cands.tolist()
    if_true, if_false = open_constraints(ecg, state)
    if lookahead is None:
        counts = np.maximum(if_true, if_false)[cands]
    else:
        counts = np.array([if_true[h] if lookahead(int(h)) == 1 else if_false[h] for h in cands])
    order = np.lexsort((cands, -counts))
    return cands[order[:pool_size]].tolist()


def covered_gain(state_mask: np.ndarray, result: InferenceResult) -> int:
    return int(np.count_nonzero(state_mask | (result.labels != UNDECIDED)))


def greedy_select(ecg: ECG, state: EvaluationState, cfg: InferenceConfig,
                  lookahead: Callable[[int], int], pool_size: int | None = DEFAULT_POOL_SIZE,
                  candidates: Sequence[int] | None = None, workers: int | None = None) -> Pick:
    """Pick the candidate whose evaluation maximises the covered-set size.

    Every candidate is clamped to ``lookahead(h)``, the label the crowd is
    expected to give, and scored by ``|Q ∪ I(G, evidence ∪ {h})|``.
    Candidate solves are independent and run on ``workers`` threads; the
    argmax is taken afterwards with ties to the lowest id.
    """
    if candidates is None:
        candidates = approx_candidates(ecg, state, pool_size, lookahead)
    candidates = sorted(int(h) for h in candidates)
    if not candidates:
        raise SelectionExhausted("exhausted: every BET has been evaluated or inferred")
    mask = state.covered_mask()

    def score(h):
        ev = dict(state.evidence)
        label = int(lookahead(h))
        ev[h] = label
        res = map_solve(ecg, ev, cfg)
        return covered_gain(mask, res), res, label

    workers = default_workers() if workers is None else workers
    if workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(score, candidates))
    else:
        scored = [score(h) for h in candidates]
    best = max(range(len(candidates)), key=lambda i: (scored[i][0], -candidates[i]))
    gain, res, label = scored[best]
    return Pick(candidates[best], gain, res, label, len(candidates))


def baseline_select(strategy: Strategy, ecg: ECG, state: EvaluationState,
                    rng: np.random.Generator) -> int:
    """Next BET for the non-greedy strategies."""
    cands = state.uncovered()
    if not cands:
        raise SelectionExhausted("exhausted: every BET has been evaluated or inferred")
    if strategy.kind in (MAX_DEGREE, MAX_DEGREE_PLUS_INFERENCE):
        deg = ecg.degrees
        return min(cands, key=lambda h: (-deg[h], h))
    if strategy.kind in (RANDOM, RANDOM_PLUS_INFERENCE, INDEPENDENT_CASCADE):
        return cands[int(rng.integers(len(cands)))]
    raise ValueError(f"{strategy.kind} is not a baseline strategy")


def cascade_fire(ecg: ECG, labels: dict[int, int], h: int) -> list[int]:
    """One-hop forward propagation after ``h`` is labelled.

    Each constraint with ``h`` in its body whose other body members are all
    labelled true sets its head to true, unless the head already has a
    label.  Fired heads do not fire further.
    """
    if labels.get(h) != 1:
        return []
    fired = []
    for j in ecg.incidence[h]:
        c = ecg.constraints[j]
        if h not in c.body or c.head in labels:
            continue
        if all(labels.get(b) == 1 for b in c.body):
            labels[c.head] = 1
            fired.append(c.head)
    return fired


def inferable_size(ecg: ECG, chosen: Sequence[int], gold, cfg: InferenceConfig = InferenceConfig()) -> int:
    return map_solve(ecg, {int(h): int(gold[h]) for h in chosen}, cfg).inferable_size


def greedy_sequence(ecg: ECG, gold, k: int, cfg: InferenceConfig = InferenceConfig(),
                    workers: int | None = 1) -> tuple[list[int], list[int]]:
    """Plain greedy maximisation of ``|I(G, S)|`` with gold-label clamping.

    Returns the chosen ids and ``|I|`` after each step.
    """
    state = EvaluationState(ecg.n_bets)
    chosen, sizes = [], []
    for _ in range(min(k, ecg.n_bets)):
        cands = [h for h in range(ecg.n_bets) if h not in state.evidence]
        pick = greedy_select(ecg, state, cfg, lambda h: int(gold[h]), candidates=cands, workers=workers)
        state.evidence[pick.bet] = int(gold[pick.bet])
        chosen.append(pick.bet)
        sizes.append(pick.gain)
    return chosen, sizes


BRUTE_FORCE_LIMIT = 15


def brute_force_best_set(ecg: ECG, gold, k: int, cfg: InferenceConfig = InferenceConfig()):
    """Exhaustive best evidence set of size ``k`` under gold clamping.

    Returns ``(ids, |I|)``; the first maximiser in lexicographic order wins.
    """
    n = ecg.n_bets
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"oracle limit: brute force supports at most {BRUTE_FORCE_LIMIT} BETs, got {n}")
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}], got {k}")
    best, best_size = (), -1
    for combo in itertools.combinations(range(n), k):
        size = inferable_size(ecg, combo, gold, cfg)
        if size > best_size:
            best, best_size = combo, size
    return best, best_size


@dataclass
class ProbeReport:
    trials: int
    violations: list[dict] = field(default_factory=list)
    monotone_violations: list[dict] = field(default_factory=list)
    pairwise_checked: int = 0
    pairwise_violations: list[dict] = field(default_factory=list)
    higher_order_pairs_checked: int = 0
    higher_order_violations: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "submodularity_violations": self.violations,
            "monotonicity_violations": self.monotone_violations,
            "pairwise_regularity_checked": self.pairwise_checked,
            "pairwise_regularity_violations": self.pairwise_violations,
            "higher_order_pairs_checked": self.higher_order_pairs_checked,
            "higher_order_regularity_violations": self.higher_order_violations,
        }


def _corner(c, assign: Mapping[int, float]) -> float:
    return c.weight * potential(c, assign)


def regularity_check(ecg: ECG, report: ProbeReport) -> None:
    """Check psi(0,1) + psi(1,0) >= psi(0,0) + psi(1,1) on constraint corners.

    Pairwise (single-body) constraints are checked directly.  For larger
    constraints every pair of domain BETs is checked with the remaining
    members fixed at each 0/1 corner; those results are informational.
    """
    for c in ecg.constraints:
        dom = c.domain
        for p, q in itertools.combinations(range(len(dom)), 2):
            rest = [i for i in range(len(dom)) if i not in (p, q)]
            for fixed in itertools.product((0, 1), repeat=len(rest)):
                vals = {}
                for i, v in zip(rest, fixed):
                    vals[dom[i]] = v

                def psi(a, b):
                    assign = dict(vals)
                    assign[dom[p]] = a
                    assign[dom[q]] = b
                    return _corner(c, assign)

                lhs = psi(0, 1) + psi(1, 0)
                rhs = psi(0, 0) + psi(1, 1)
                witness = {"constraint": c.id, "pair": [dom[p], dom[q]], "fixed": dict(zip(map(str, (dom[i] for i in rest)), fixed)),
                           "lhs": lhs, "rhs": rhs}
                if len(dom) == 2:
                    report.pairwise_checked += 1
                    if lhs < rhs:
                        report.pairwise_violations.append(witness)
                else:
                    report.higher_order_pairs_checked += 1
                    if lhs < rhs:
                        report.higher_order_violations.append(witness)


def submodularity_probe(ecg: ECG, gold, trials: int, rng_seed: int,
                        cfg: InferenceConfig = InferenceConfig()) -> ProbeReport:
    """Sample ``A ⊆ B`` and ``h ∉ B`` and test diminishing returns of ``|I|``.

    Never raises on a violation; every witness is recorded verbatim in the
    report.
    """
    rng = np.random.default_rng(rng_seed)
    n = ecg.n_bets
    report = ProbeReport(trials)
    cache: dict[frozenset, np.ndarray] = {}

    def inferred(s: frozenset) -> np.ndarray:
        if s not in cache:
            res = map_solve(ecg, {h: int(gold[h]) for h in sorted(s)}, cfg)
            cache[s] = res.labels != UNDECIDED
        return cache[s]

    for _ in range(trials if n >= 1 else 0):
        perm = rng.permutation(n)
        b_size = int(rng.integers(0, n))
        a_size = int(rng.integers(0, b_size + 1))
        B = frozenset(int(v) for v in perm[:b_size])
        A = frozenset(int(v) for v in perm[:a_size])
        h = int(perm[b_size])
        fa, fah = inferred(A), inferred(A | {h})
        fb, fbh = inferred(B), inferred(B | {h})
        gain_a = int(fah.sum() - fa.sum())
        gain_b = int(fbh.sum() - fb.sum())
        if gain_a < gain_b:
            report.violations.append({"A": sorted(A), "B": sorted(B), "h": h,
                                      "gain_A": gain_a, "gain_B": gain_b})
        for base, ext, name in ((A, fa, "A"), (B, fb, "B")):
            grown = inferred(base | {h})
            if (ext & ~grown).any():
                report.monotone_violations.append({"set": sorted(base), "h": h,
                                                   "lost": np.flatnonzero(ext & ~grown).tolist()})
    regularity_check(ecg, report)
    return report
