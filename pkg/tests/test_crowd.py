import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgeval.crowd import (
    BudgetPlan,
    InteractiveSource,
    OracleSource,
    SimulatedSource,
    WorkerModel,
    allocate_workers,
    estimate_gamma,
    hoeffding_bound,
    majority_vote,
    monte_carlo_error,
    render_sentence,
    simulate_responses,
    worker_count,
)
from kgeval.errors import BudgetExhausted, GoldIncomplete, KGEvalError
from kgeval.kg import BET, KnowledgeGraph, parse_triples


@given(st.lists(st.sampled_from([0, 1]), min_size=1, max_size=25))
def test_majority_vote_matches_closed_form(votes):
    # floor(mean - 1/2) + 1, evaluated exactly
    assert majority_vote(votes) == math.floor(sum(votes) / len(votes) - 0.5) + 1


def test_majority_ties_go_to_true():
    assert majority_vote([0, 1]) == 1
    with pytest.raises(ValueError):
        majority_vote([])


def test_adversarial_workers_rejected():
    for acc in (0.5, 0.3, 1.2):
        with pytest.raises(ValueError):
            WorkerModel(acc)


def test_worker_formula():
    # B=1000, c=1, gamma=0.5, i_t=i_max -> 500 workers
    assert worker_count(1000, 1, 0.5, 100, 100) == 500
    assert worker_count(1000, 1, 0.5, 1, 100) == 5


@given(gamma=st.floats(0.01, 0.99), i_max=st.integers(1, 500), total=st.floats(0.5, 1000),
       cost=st.sampled_from([0.01, 0.1, 1.0]))
def test_geometric_allocation_never_overspends(gamma, i_max, total, cost):
    plan = BudgetPlan(total, unit_cost=cost, gamma=gamma, i_max=i_max)
    spent = 0.0
    t = 0
    while (i_t := i_max * gamma ** t) >= 1:
        t += 1
        formula = worker_count(total, cost, gamma, i_t, i_max)
        try:
            w = allocate_workers(plan, i_t)
        except BudgetExhausted:
            # only the one-worker minimum can drain the budget early
            assert formula == 0
            break
        if formula >= 1:
            assert w == formula  # the residual cap never bites while the formula is positive
        spent += w * cost
    assert spent <= total + 1e-9
    assert plan.spent == pytest.approx(spent)


def test_allocation_fixes_i_max_and_records():
    plan = BudgetPlan(10.0, unit_cost=1.0, gamma=0.5)
    assert allocate_workers(plan, 4, bet=3) == 5
    assert plan.i_max == 4 and plan.per_task == {3: 5}
    with pytest.raises(ValueError):
        allocate_workers(plan, 9)


def test_exhausted_budget():
    plan = BudgetPlan(0.015, unit_cost=0.01)
    allocate_workers(plan, 1)
    with pytest.raises(BudgetExhausted):
        allocate_workers(plan, 1)


def test_infinite_budget_only_charges():
    plan = BudgetPlan(math.inf)
    plan.charge(3.0)
    assert plan.spent == 3.0 and plan.residual == math.inf


def test_estimate_gamma():
    sizes = [100 * 0.5 ** t for t in range(30)]
    assert estimate_gamma(sizes) == pytest.approx(0.5, abs=1e-6)
    assert 0 <= estimate_gamma([3]) < 1
    with pytest.raises(ValueError):
        estimate_gamma([])


def test_hoeffding_values():
    assert hoeffding_bound(1, 0.75) == pytest.approx(2 * math.exp(-0.125))
    assert hoeffding_bound(100, 1.0) == pytest.approx(2 * math.exp(-50))


@pytest.mark.parametrize("acc", [0.6, 0.75, 0.9])
def test_monte_carlo_below_bound(acc):
    for w in (1, 2, 5, 10, 31, 64):
        rate, se = monte_carlo_error(acc, w, 1000, 1)
        assert rate <= hoeffding_bound(w, acc) + 3 * se


def test_monte_carlo_rate_matches_binomial():
    # exact majority error for odd w is a binomial tail
    from scipy.stats import binom
    rate, se = monte_carlo_error(0.7, 7, 20000, 3)
    exact = binom.cdf(3, 7, 0.7)
    assert abs(rate - exact) <= 4 * math.sqrt(exact * (1 - exact) / 20000)
    assert se > 0


def test_simulated_votes_are_reproducible():
    bet = BET(0, "a", "p", "b", gold=1)
    a = simulate_responses(WorkerModel(0.7, 5), bet, 9)
    b = simulate_responses(WorkerModel(0.7, 5), bet, 9)
    assert a == b and len(a.votes) == 9 and a.spend == pytest.approx(0.09)
    with pytest.raises(GoldIncomplete):
        simulate_responses(WorkerModel(0.7), BET(0, "a", "p", "b"), 1)


def test_perfect_workers_agree_with_gold(stadium_graph):
    kg, _, _ = stadium_graph
    src = SimulatedSource(kg, WorkerModel(1.0), fixed_workers=3)
    oracle = OracleSource(kg)
    for h in range(len(kg)):
        assert src.answer(h)[0] == oracle.answer(h)[0] == kg[h].gold


def test_simulated_source_uses_plan(stadium_graph):
    kg, _, _ = stadium_graph
    plan = BudgetPlan(1.0, unit_cost=0.01, gamma=0.5, i_max=10)
    src = SimulatedSource(kg, WorkerModel(0.8))
    _, spend = src.answer(0, plan, 10)
    assert len(src.responses[0].votes) == 50 and spend == pytest.approx(0.5)
    # no i_t (seed queries): one worker
    src.answer(1, plan, None)
    assert len(src.responses[1].votes) == 1


def test_sentences(stadium_graph):
    kg, _, _ = stadium_graph
    assert render_sentence(kg, 0) == "Stadium Joe Louis Arena is home stadium of sports team Red Wings"
    assert render_sentence(kg, 4) == "Joe Louis Arena is a stadium"
    g = parse_triples("ducks\tteamHomeCity\tanaheim\n")
    from kgeval.kg import Predicate
    g = g.with_signatures({"teamHomeCity": Predicate("teamHomeCity", "teamHomeCity", "SportsTeam", "City")})
    assert render_sentence(g, 0) == "Sports team ducks has team home city anaheim"


def test_interactive_session(stadium_graph, tmp_path):
    kg, _, _ = stadium_graph
    out = io.StringIO()
    audit = tmp_path / "audit.jsonl"
    src = InteractiveSource(kg, io.StringIO("a\n0\n1\n"), out, audit, total=2, clock=lambda: 12.5)
    assert src.answer(3) == (0, 0.01)
    assert src.answer(0)[0] == 1
    lines = out.getvalue().split("? ")
    assert lines[0] == "[1/2] City Detroit has city in state Taj Mahal — true(1)/false(0)/ambiguous(a)"
    assert lines[1].startswith("[1/2]")  # ambiguous answer re-asks
    assert lines[2].startswith("[2/2]")
    log = [json.loads(x) for x in audit.read_text().splitlines()]
    assert log == [{"answer": "a", "bet": 3, "timestamp": 12.5}, {"answer": "0", "bet": 3, "timestamp": 12.5},
                   {"answer": "1", "bet": 0, "timestamp": 12.5}]
    with pytest.raises(KGEvalError):
        src.answer(1)
