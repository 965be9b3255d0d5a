import numpy as np
import pytest

from kgeval.kg import ISA
from kgeval.rules import ground
from kgeval.synthetic import REFERENCE_SIZE, SyntheticSpec, generate_synthetic, synthetic_rules


@pytest.fixture(scope="module")
def reference():
    kg, rules = generate_synthetic()
    return kg, rules, ground(kg, rules)


def test_reference_shape(reference):
    kg, rules, ecg = reference
    assert len(kg) == REFERENCE_SIZE
    assert abs(kg.gold_array().mean() - 0.91) < 0.01
    lengths = {m: sum(r.body_length == m for r in rules) for m in (1, 2, 3)}
    assert all(v > 0 for v in lengths.values())
    assert len(ecg) > 5 * len(kg)


def test_rules_are_sound_on_gold(reference):
    # a rule instance whose body is all true must have a true head
    kg, _, ecg = reference
    gold = kg.gold_array()
    for c in ecg.constraints:
        if all(gold[b] for b in c.body):
            assert gold[c.head] == 1, c


def test_same_seed_same_graph():
    a, ra = generate_synthetic(SyntheticSpec(n_bets=400, rng_seed=5))
    b, rb = generate_synthetic(SyntheticSpec(n_bets=400, rng_seed=5))
    c, _ = generate_synthetic(SyntheticSpec(n_bets=400, rng_seed=6))
    assert a.to_lines() == b.to_lines() and [str(r) for r in ra] == [str(r) for r in rb]
    assert a.to_lines() != c.to_lines()


@pytest.mark.parametrize("n, acc", [(100, 0.8), (500, 0.95), (2000, 0.9)])
def test_size_and_accuracy_targets(n, acc):
    kg, _ = generate_synthetic(SyntheticSpec(n_bets=n, target_gold_acc=acc, rng_seed=1))
    assert len(kg) == n
    assert kg.gold_array().sum() == n - round(n * (1 - acc))


def test_every_false_belief_is_isolated_from_truth(reference):
    kg, _, _ = reference
    gold = kg.gold_array()
    fakes = {b.subject for b in kg if b.predicate == ISA and b.gold == 0}
    assert fakes and all(b.gold == 0 for b in kg if b.subject in fakes or b.object in fakes)
    assert np.count_nonzero(gold == 0) == len(kg) - gold.sum()


def test_bad_specs():
    with pytest.raises(ValueError):
        SyntheticSpec(target_gold_acc=0)
    with pytest.raises(ValueError):
        SyntheticSpec(n_bets=5)
    with pytest.raises(ValueError):
        SyntheticSpec(hub_size=(3, 1))


def test_rules_parse_back():
    from kgeval.rules import parse_rules
    rules = synthetic_rules()
    back = parse_rules("\n".join(str(r) for r in rules) + "\n")
    assert [str(r) for r in back] == [str(r) for r in rules]
