import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgeval.control import (
    BRUTE_FORCE_LIMIT,
    EvaluationState,
    ProbeReport,
    Strategy,
    approx_candidates,
    baseline_select,
    brute_force_best_set,
    cascade_fire,
    greedy_select,
    greedy_sequence,
    inferable_size,
    open_constraints,
    regularity_check,
    submodularity_probe,
)
from kgeval.errors import SelectionExhausted
from kgeval.inference import InferenceConfig, map_solve
from kgeval.rules import ECG, GroundedConstraint, random_ecg

seeds = st.integers(0, 100_000)


def chain(n):
    return ECG(n, [GroundedConstraint(i, 0, (i,), i + 1, 1.0) for i in range(n - 1)])


def test_greedy_picks_the_chain_root():
    ecg = chain(5)
    gold = np.ones(5, dtype=int)
    chosen, sizes = greedy_sequence(ecg, gold, 1)
    assert chosen == [0] and sizes == [5]


def test_stadium_greedy_first_pick(stadium_graph):
    kg, _, ecg = stadium_graph
    gold = kg.gold_array()
    chosen, sizes = greedy_sequence(ecg, gold, 3)
    # the two-body rule's members first, then the lone false belief
    assert chosen == [0, 1, 7]
    assert sizes == [3, 6, 8]


@given(seed=seeds, k=st.integers(1, 3))
def test_greedy_within_one_minus_inverse_e_on_pairwise_graphs(seed, k):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 11))
    ecg = random_ecg(rng, n, int(rng.integers(2, 2 * n + 1)), 1)
    gold = rng.integers(0, 2, n)
    _, sizes = greedy_sequence(ecg, gold, k)
    _, best = brute_force_best_set(ecg, gold, k)
    assert sizes[-1] >= (1 - 1 / math.e) * best


def test_two_body_constraints_can_defeat_greedy():
    # 5 & 8 -> 3 is violated by gold here; {3, 7, 8} infers five BETs while
    # no single BET infers anything, so greedy falls back to the lowest ids
    rng = np.random.default_rng(7828)
    n = int(rng.integers(4, 10))
    ecg = random_ecg(rng, n, int(rng.integers(2, 16)), 3)
    gold = rng.integers(0, 2, n)
    _, sizes = greedy_sequence(ecg, gold, 3)
    best_set, best = brute_force_best_set(ecg, gold, 3)
    assert (sizes[-1], best_set, best) == (3, (3, 7, 8), 5)
    assert sizes[-1] < (1 - 1 / math.e) * best


def test_brute_force_limit():
    with pytest.raises(ValueError, match="oracle limit"):
        brute_force_best_set(chain(BRUTE_FORCE_LIMIT + 1), np.ones(BRUTE_FORCE_LIMIT + 1), 1)


def test_greedy_ties_go_to_lowest_id():
    # two disjoint identical edges: 0->1 and 2->3
    ecg = ECG(4, [GroundedConstraint(0, 0, (0,), 1, 1.0), GroundedConstraint(1, 0, (2,), 3, 1.0)])
    pick = greedy_select(ecg, EvaluationState(4), InferenceConfig(), lambda h: 1, pool_size=None)
    assert pick.bet == 0 and pick.gain == 2


@given(seed=seeds)
def test_threaded_scoring_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    ecg = random_ecg(rng, 10, 20, 3)
    gold = rng.integers(0, 2, 10)
    assert greedy_sequence(ecg, gold, 3, workers=1) == greedy_sequence(ecg, gold, 3, workers=4)


def test_selection_exhausted():
    state = EvaluationState(2)
    state.record(0, 1)
    state.record(1, 0)
    with pytest.raises(SelectionExhausted):
        greedy_select(chain(2), state, InferenceConfig(), lambda h: 1)
    with pytest.raises(SelectionExhausted):
        baseline_select(Strategy("random"), chain(2), state, np.random.default_rng(0))


def test_max_degree_baseline():
    ecg = ECG(4, [GroundedConstraint(0, 0, (0,), 1, 1.0), GroundedConstraint(1, 0, (2,), 1, 1.0),
                  GroundedConstraint(2, 0, (3,), 2, 1.0)])
    state = EvaluationState(4)
    assert baseline_select(Strategy("maxDegree"), ecg, state, None) == 1
    state.record(1, 1)
    assert baseline_select(Strategy("maxDegree"), ecg, state, None) == 2


@given(seed=seeds)
def test_random_baseline_picks_uncovered(seed):
    rng = np.random.default_rng(seed)
    state = EvaluationState(6)
    for h in rng.choice(6, size=3, replace=False):
        state.record(int(h), 1)
    h = baseline_select(Strategy("random"), chain(6), state, rng)
    assert h not in state.covered


def test_cascade_is_one_hop():
    ecg = chain(4)
    labels = {0: 1}
    assert cascade_fire(ecg, labels, 0) == [1]
    assert labels == {0: 1, 1: 1}
    assert cascade_fire(ecg, {0: 0}, 0) == []


def test_cascade_needs_every_body_member_true():
    ecg = ECG(3, [GroundedConstraint(0, 0, (0, 1), 2, 1.0)])
    labels = {0: 1}
    assert cascade_fire(ecg, labels, 0) == []
    labels[1] = 1
    assert cascade_fire(ecg, labels, 1) == [2]


def test_open_constraints_counts():
    # 0 & 1 -> 2 with 0 covered true: evaluating 1 true or 2 false fires it
    ecg = ECG(3, [GroundedConstraint(0, 0, (0, 1), 2, 1.0)])
    state = EvaluationState(3)
    state.record(0, 1)
    if_true, if_false = open_constraints(ecg, state)
    assert if_true.tolist() == [0, 1, 0]
    assert if_false.tolist() == [0, 0, 1]
    assert approx_candidates(ecg, state, 1, lambda h: 1) == [1]
    assert approx_candidates(ecg, state, 1, lambda h: 0) == [2]


@given(seed=seeds, pool=st.integers(1, 8))
def test_candidate_pool_is_uncovered_and_bounded(seed, pool):
    rng = np.random.default_rng(seed)
    ecg = random_ecg(rng, 12, 20, 3)
    state = EvaluationState(12)
    for h in rng.choice(12, size=4, replace=False):
        state.record(int(h), int(rng.integers(0, 2)))
    cands = approx_candidates(ecg, state, pool)
    assert len(cands) == min(pool, 8)
    assert not set(cands) & set(state.covered)


@given(seed=seeds)
def test_pairwise_regularity_has_no_violations(seed):
    ecg = random_ecg(np.random.default_rng(seed), 8, 15, 3)
    report = ProbeReport(0)
    regularity_check(ecg, report)
    assert report.pairwise_violations == []
    assert report.pairwise_checked == sum(len(c.body) == 1 for c in ecg.constraints)


def test_inferable_set_grows_with_evidence_on_a_chain():
    ecg = chain(6)
    gold = np.ones(6, dtype=int)
    assert inferable_size(ecg, [3], gold) == 3
    assert inferable_size(ecg, [0, 3], gold) == 6


def test_probe_records_witnesses_without_raising():
    ecg = random_ecg(np.random.default_rng(4), 8, 14, 3)
    gold = np.random.default_rng(4).integers(0, 2, 8)
    report = submodularity_probe(ecg, gold, 40, 0)
    doc = report.to_json()
    assert doc["trials"] == 40
    for v in report.violations:
        assert v["gain_A"] < v["gain_B"]
        assert set(v["A"]) <= set(v["B"]) and v["h"] not in v["B"]


def test_inference_labels_agree_with_gold_on_sound_graphs():
    # rules that hold on gold never push a BET to the wrong label
    ecg = chain(5)
    gold = np.array([1, 1, 1, 1, 1])
    res = map_solve(ecg, {2: 1}, InferenceConfig())
    decided = res.labels >= 0
    assert np.array_equal(res.labels[decided], gold[decided])
