"""Crowd answer sources, majority voting and budgeted worker allocation.

Three sources share one interface, ``source.answer(bet, plan, i_t)``:

* :class:`OracleSource` returns the gold label at the BET's cost,
* :class:`SimulatedSource` polls ``w`` noisy workers and majority-votes,
* :class:`InteractiveSource` asks a human on the console.

Worker redundancy follows ``w = floor(B * i_t * (1 - gamma) / (c * i_max))``
so that BETs with large inferable sets get more votes.
"""
from __future__ import annotations

import json
import math
import re
import sys
import time
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .errors import BudgetExhausted, GoldIncomplete, KGEvalError
from .kg import BET, ISA, KnowledgeGraph

# budget comparisons tolerate float round-off from repeated subtraction
_EPS = 1e-9


def majority_vote(votes: Sequence[int]) -> int:
    """``floor(mean - 1/2) + 1``: 1 when at least half the votes are 1."""
    votes = list(votes)
    if not votes:
        raise ValueError("majority vote over no votes")
    ones = sum(int(v) for v in votes)
    return 1 if 2 * ones >= len(votes) else 0


@dataclass(frozen=True)
class WorkerModel:
    """I.i.d. workers that report the gold label with probability ``accuracy``."""

    accuracy: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.5 < self.accuracy <= 1.0:
            raise ValueError(f"worker accuracy must lie in (0.5, 1], got {self.accuracy}; "
                             "workers at or below 0.5 are adversarial")


@dataclass
class CrowdResponse:
    bet: int
    votes: list[int]
    aggregate: int
    spend: float


@dataclass
class BudgetPlan:
    """Budget state for worker allocation.

    ``gamma`` is the assumed geometric decay of inferable-set sizes and
    ``i_max`` the largest one (the first post-seed step).  ``i_max`` may be
    left at 0 and is then fixed by the first allocation.
    """

    total: float
    unit_cost: float = 0.01
    gamma: float = 0.5
    i_max: int = 0
    spent: float = 0.0
    per_task: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.total >= 0:
            raise ValueError("budget must be non-negative")
        if not self.unit_cost > 0:
            raise ValueError("unit cost must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.spent > self.total + _EPS:
            raise ValueError("spend exceeds total budget")

    @property
    def residual(self) -> float:
        return max(0.0, self.total - self.spent)

    def charge(self, amount: float) -> None:
        if amount > self.residual + _EPS:
            raise BudgetExhausted(f"budget exhausted: need {amount:.4g}, {self.residual:.4g} left")
        self.spent += amount


def worker_count(total: float, unit_cost: float, gamma: float, i_t: float, i_max: float) -> int:
    """The allocation formula, floored, before the one-worker minimum."""
    return int(math.floor(total * i_t * (1.0 - gamma) / (unit_cost * i_max) + _EPS))


def allocate_workers(plan: BudgetPlan, i_t: int, bet: int | None = None) -> int:
    """Number of workers for a task with inferable-set size ``i_t``.

    At least one worker is always assigned; the count is capped by what the
    residual budget can pay for, and ``w * c`` is deducted from it.
    """
    if plan.i_max == 0:
        plan.i_max = max(int(i_t), 1)
    if not 1 <= i_t <= plan.i_max:
        raise ValueError(f"need 1 <= i_t <= i_max, got i_t={i_t}, i_max={plan.i_max}")
    if plan.residual + _EPS < plan.unit_cost:
        raise BudgetExhausted(f"budget exhausted: {plan.residual:.4g} left, one worker costs {plan.unit_cost:.4g}")
    w = max(1, worker_count(plan.total, plan.unit_cost, plan.gamma, i_t, plan.i_max))
    w = min(w, int(math.floor(plan.residual / plan.unit_cost + _EPS)))
    plan.charge(w * plan.unit_cost)
    if bet is not None:
        plan.per_task[int(bet)] = w
    return w


def estimate_gamma(sizes: Sequence[float]) -> float:
    """Educated guess of the decay factor from observed inferable-set sizes.

    The literal guess ``1 - i_max / mean(i_t)`` is never positive because
    the mean cannot exceed the maximum.  When it falls outside ``[0, 1)``
    we use ``1 - i_max / sum(i_t)`` instead, which equals the geometric
    decay factor for an infinite geometric sequence.
    """
    sizes = [float(s) for s in sizes if s > 0]
    if not sizes:
        raise ValueError("cannot estimate gamma from no inferable-set sizes")
    i_max = max(sizes)
    guess = 1.0 - i_max / (sum(sizes) / len(sizes))
    if 0.0 <= guess < 1.0:
        return guess
    return max(0.0, 1.0 - i_max / sum(sizes))


def hoeffding_bound(w: int, accuracy: float) -> float:
    """``2 exp(-2 w eps^2)`` with margin ``eps = accuracy - 1/2``."""
    eps = accuracy - 0.5
    return 2.0 * math.exp(-2.0 * w * eps * eps)


def _vote_rng(seed: int, bet: int, stream: int = 0) -> np.random.Generator:
    # disjoint per-BET streams so answers do not depend on query order
    return np.random.default_rng([int(seed), int(bet), int(stream)])


def simulate_responses(model: WorkerModel, bet: BET, w: int, unit_cost: float | None = None,
                       stream: int = 0) -> CrowdResponse:
    """``w`` independent votes, each equal to gold with probability ``accuracy``."""
    if bet.gold is None:
        raise GoldIncomplete(f"gold incomplete: BET {bet.id} has no gold label to simulate from")
    if w < 1:
        raise ValueError("need at least one worker")
    rng = _vote_rng(model.rng_seed, bet.id, stream)
    correct = rng.random(w) < model.accuracy
    votes = np.where(correct, bet.gold, 1 - bet.gold).astype(int).tolist()
    cost = bet.cost if unit_cost is None else unit_cost
    return CrowdResponse(bet.id, votes, majority_vote(votes), w * cost)


def monte_carlo_error(accuracy: float, w: int, trials: int, rng_seed: int = 0) -> tuple[float, float]:
    """Empirical majority-vote error rate and its standard error.

    Trials alternate between gold 0 and gold 1 because the tie rule
    favours 1, so the two cases err at different rates for even ``w``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng([int(rng_seed), int(w), int(round(accuracy * 1e6))])
    correct = rng.random((trials, w)) < accuracy
    gold = np.arange(trials) % 2
    ones = np.where(gold[:, None] == 1, correct, ~correct).sum(axis=1)
    agg = (2 * ones >= w).astype(int)
    err = agg != gold
    rate = float(err.mean())
    se = math.sqrt(rate * (1.0 - rate) / trials)
    return rate, se


class OracleSource:
    """Gold labels at the BET's own cost; the plan, if any, is charged once."""

    kind = "oracle"

    def __init__(self, kg: KnowledgeGraph):
        kg.gold_array()  # fail early on missing gold
        self.kg = kg

    def lookahead(self, h: int, scores=None) -> int:
        return int(self.kg[h].gold)

    def answer(self, h: int, plan: BudgetPlan | None = None, i_t: int | None = 1) -> tuple[int, float]:
        bet = self.kg[h]
        if plan is not None:
            plan.charge(bet.cost)
        return int(bet.gold), float(bet.cost)


class SimulatedSource:
    """Noisy workers; redundancy comes from the plan, or one worker without one."""

    kind = "simulated"

    def __init__(self, kg: KnowledgeGraph, model: WorkerModel, fixed_workers: int | None = None):
        kg.gold_array()
        self.kg = kg
        self.model = model
        if fixed_workers is not None and fixed_workers < 1:
            raise ValueError("need at least one worker per task")
        self.fixed_workers = fixed_workers
        self.responses: list[CrowdResponse] = []
        self._asked: dict[int, int] = {}

    def lookahead(self, h: int, scores=None) -> int:
        return int(self.kg[h].gold)

    def answer(self, h: int, plan: BudgetPlan | None = None, i_t: int | None = 1) -> tuple[int, float]:
        """Majority answer for BET ``h``.

        With a finite budget plan and a known ``i_t`` the worker count comes
        from :func:`allocate_workers`; otherwise ``fixed_workers`` (or one
        worker) is used and the plan is only charged.
        """
        bet = self.kg[h]
        allocate = (self.fixed_workers is None and plan is not None and i_t is not None
                    and math.isfinite(plan.total))
        if allocate:
            if plan.i_max == 0:
                plan.i_max = max(1, int(i_t))
            w = allocate_workers(plan, max(1, min(int(i_t), plan.i_max)), h)
        else:
            w = self.fixed_workers or 1
        unit = plan.unit_cost if allocate else bet.cost
        if plan is not None and not allocate:
            plan.charge(w * unit)
        stream = self._asked.get(h, 0)
        self._asked[h] = stream + 1
        resp = simulate_responses(self.model, bet, w, unit_cost=unit, stream=stream)
        self.responses.append(resp)
        return resp.aggregate, resp.spend


_PREPOSITIONS = frozenset({"of", "in", "at", "by", "for", "to", "from", "with", "on"})
_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def _words(name: str) -> str:
    return _CAMEL.sub(" ", name.replace("_", " ")).lower()


def render_sentence(kg: KnowledgeGraph, h: int) -> str:
    """Human-readable sentence for a BET, e.g.

    ``Stadium Joe Louis Arena is home stadium of sports team Red Wings``.
    """
    bet = kg[h]
    subj = kg.entities[bet.subject].surface
    obj = kg.entities[bet.object].surface
    if bet.predicate == ISA:
        return f"{subj} is a {_words(obj)}"
    pred = kg.predicates.get(bet.predicate)
    dom = _words(pred.domain) + " " if pred and pred.domain else ""
    rng = _words(pred.range) if pred and pred.range else ""
    words = _words(bet.predicate)
    if words.rsplit(" ", 1)[-1] in _PREPOSITIONS:
        verb = f"is {words}"
    else:
        verb = words if words.startswith(("is ", "has ")) else f"has {words}"
        if rng and words.endswith(rng):
            rng = ""  # "has home city Anaheim", not "... city city Anaheim"
    text = " ".join(part for part in (dom + subj, verb, rng, obj) if part)
    return text[0].upper() + text[1:]


class InteractiveSource:
    """Ask a person on the console; every answer goes to a JSONL audit log."""

    kind = "interactive"

    def __init__(self, kg: KnowledgeGraph, stdin: TextIO | None = None, stdout: TextIO | None = None,
                 audit_path=None, total: int | None = None, clock=time.time):
        self.kg = kg
        self.stdin = stdin or sys.stdin
        self.stdout = stdout or sys.stdout
        self.audit_path = audit_path
        self.total = total
        self.asked = 0
        self.clock = clock

    def lookahead(self, h: int, scores=None) -> int:
        if scores is None:
            return 1
        return 1 if scores[h] >= 0.5 else 0

    def _log(self, h: int, answer: str) -> None:
        if self.audit_path is None:
            return
        with open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"bet": h, "answer": answer, "timestamp": self.clock()}, sort_keys=True) + "\n")

    def answer(self, h: int, plan: BudgetPlan | None = None, i_t: int | None = 1) -> tuple[int, float]:
        bet = self.kg[h]
        if plan is not None:
            plan.charge(bet.cost)
        self.asked += 1
        n = self.total if self.total is not None else len(self.kg)
        prompt = f"[{self.asked}/{n}] {render_sentence(self.kg, h)} — true(1)/false(0)/ambiguous(a)? "
        while True:
            self.stdout.write(prompt)
            self.stdout.flush()
            line = self.stdin.readline()
            if not line:
                raise KGEvalError("end of input while waiting for an answer")
            reply = line.strip().lower()
            if reply in ("1", "0", "a"):
                self._log(h, reply)
            if reply in ("1", "0"):
                return int(reply), float(bet.cost)
