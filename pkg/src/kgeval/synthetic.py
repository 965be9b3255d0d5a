"""Synthetic sports-domain knowledge graphs with known gold labels.

The true world is a set of typed entities linked by functional base maps
(an athlete plays for one team, a team has one home stadium, ...).  Every
relation is a path of base steps, each step walked forwards or backwards.
A rule ``r1(v0,v1) & r2(v1,v2) -> q(v0,v2)`` is emitted whenever the body
path reduces to the head path, where a backward step followed by the same
forward step cancels for a functional map and a forward step followed by
its backward step cancels for a one-to-one map.  Such rules are sound on
the true world by construction.

A belief sample of the world is corrupted in two ways:

* mistyped entities: a fake entity is claimed to belong to a category and
  appears in several false beliefs in slots of that category,
* swapped objects: a true belief is copied with a wrong object of the same
  type.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .kg import BET, DEFAULT_COST, ISA, KnowledgeGraph, Predicate
from .rules import Atom, Const, Rule, Var, make_rule

# base maps: name -> (domain, range, one_to_one)
BASE = {
    "playsFor": ("Athlete", "Team", False),
    "teamCoach": ("Team", "Coach", True),
    "teamPlaysInLeague": ("Team", "League", False),
    "homeStadium": ("Team", "Stadium", True),
    "stadiumInCity": ("Stadium", "City", False),
    "cityInState": ("City", "State", False),
    "stateInCountry": ("State", "Country", False),
    "leagueSport": ("League", "Sport", False),
}

# every relation as a sequence of (base map, +1 forward / -1 backward)
PATHS = {name: ((name, 1),) for name in BASE}
PATHS.update({
    "teamHasAthlete": (("playsFor", -1),),
    "coachOf": (("teamCoach", -1),),
    "athletePlaysInLeague": (("playsFor", 1), ("teamPlaysInLeague", 1)),
    "athleteCoach": (("playsFor", 1), ("teamCoach", 1)),
    "teamHomeCity": (("homeStadium", 1), ("stadiumInCity", 1)),
    "coachInLeague": (("teamCoach", -1), ("teamPlaysInLeague", 1)),
    "athletePlaysSport": (("playsFor", 1), ("teamPlaysInLeague", 1), ("leagueSport", 1)),
    "athleteHomeCity": (("playsFor", 1), ("homeStadium", 1), ("stadiumInCity", 1)),
    "teamInState": (("homeStadium", 1), ("stadiumInCity", 1), ("cityInState", 1)),
})

SUPERTYPES = {"Athlete": "Person", "Coach": "Person", "Team": "Organization", "League": "Organization"}

# entities per category for an 1860-belief graph; scaled linearly otherwise
POPULATION = {
    "Athlete": 190, "Team": 20, "Coach": 20, "Stadium": 20, "City": 15,
    "State": 8, "Country": 2, "League": 4, "Sport": 3,
}
REFERENCE_SIZE = 1860


@dataclass(frozen=True)
class SyntheticSpec:
    n_bets: int = REFERENCE_SIZE
    target_gold_acc: float = 0.9134
    rng_seed: int = 0
    swap_share: float = 0.1
    hub_size: tuple[int, int] = (3, 8)
    weight_type: float = 1.0
    weight_horn: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.target_gold_acc <= 1.0:
            raise ValueError(f"target gold accuracy must lie in (0, 1], got {self.target_gold_acc}")
        if self.n_bets < 20:
            raise ValueError("need at least 20 beliefs for a synthetic graph")
        if not 0.0 <= self.swap_share <= 1.0:
            raise ValueError("swap share must lie in [0, 1]")
        lo, hi = self.hub_size
        if not 1 <= lo <= hi:
            raise ValueError("hub size range must satisfy 1 <= lo <= hi")


def _ends(path):
    (b0, d0), (b1, d1) = path[0], path[-1]
    dom = BASE[b0][0] if d0 > 0 else BASE[b0][1]
    rng = BASE[b1][1] if d1 > 0 else BASE[b1][0]
    return dom, rng


def _functional(path) -> bool:
    return all(d > 0 or BASE[b][2] for b, d in path)


def signatures() -> dict[str, Predicate]:
    return {name: Predicate(name, name, *_ends(path), _functional(path)) for name, path in PATHS.items()}


def _reduce(steps) -> tuple:
    out: list[tuple[str, int]] = []
    for b, d in steps:
        if out and out[-1][0] == b and out[-1][1] == -d and (d > 0 or BASE[b][2]):
            # backward-then-forward always cancels; forward-then-backward only when one-to-one
            out.pop()
        else:
            out.append((b, d))
    return tuple(out)


def _flip(path):
    return tuple((b, -d) for b, d in reversed(path))


def _horn_rules(max_body: int = 3):
    """(body, head) pairs of (relation, reversed) atoms whose paths agree."""
    by_path = {}
    for name, path in PATHS.items():
        by_path[path] = (name, False)
        by_path.setdefault(_flip(path), (name, True))
    atoms = [(name, rev) for name in sorted(PATHS) for rev in (False, True)]
    seen = set()
    for m in range(1, max_body + 1):
        for body in itertools.product(atoms, repeat=m):
            steps = []
            for name, rev in body:
                steps.extend(_flip(PATHS[name]) if rev else PATHS[name])
            head = by_path.get(_reduce(steps))
            if head is None or head in body or len(set(body)) < m:
                continue
            ends = [_ends(_flip(PATHS[n]) if r else PATHS[n]) for n, r in body]
            if any(a[1] != b[0] for a, b in zip(ends, ends[1:])):
                continue
            # reading the chain from the other end gives the same rule
            mirror = (tuple((n, not r) for n, r in reversed(body)), (head[0], not head[1]))
            key = min((body, head), mirror)
            if key in seen:
                continue
            seen.add(key)
            yield body, head


def synthetic_rules(spec: SyntheticSpec = SyntheticSpec()) -> list[Rule]:
    """Type rules, supertype rules and every sound path rule up to body length 3."""
    sigs = signatures()
    rules: list[Rule] = []
    x, y = Var("x"), Var("y")
    for name in sorted(sigs):
        p = sigs[name]
        rules.append(make_rule(len(rules), [Atom(name, (x, y))], Atom(ISA, (x, Const(p.domain))), spec.weight_type))
        rules.append(make_rule(len(rules), [Atom(name, (x, y))], Atom(ISA, (y, Const(p.range))), spec.weight_type))
    for sub, sup in sorted(SUPERTYPES.items()):
        rules.append(make_rule(len(rules), [Atom(ISA, (x, Const(sub)))], Atom(ISA, (x, Const(sup))), spec.weight_type))
    for body, (hname, hrev) in _horn_rules():
        vs = [Var(f"v{i}") for i in range(len(body) + 1)]
        atoms = [Atom(n, (vs[i + 1], vs[i]) if r else (vs[i], vs[i + 1])) for i, (n, r) in enumerate(body)]
        head = Atom(hname, (vs[-1], vs[0]) if hrev else (vs[0], vs[-1]))
        rules.append(make_rule(len(rules), atoms, head, spec.weight_horn))
    return rules


def _world(rng, scale: float):
    ents = {c: [f"{c.lower()}{i:03d}" for i in range(max(2, int(round(k * scale))))]
            for c, k in POPULATION.items()}
    base = {}
    for name, (d, r, _) in BASE.items():
        targets = ents[r]
        # cycle through targets so each is used; equal sizes give a bijection
        idx = rng.permutation(np.resize(np.arange(len(targets)), len(ents[d])))
        base[name] = {e: targets[int(i)] for e, i in zip(ents[d], idx)}
    inverse = {name: {} for name in BASE}
    for name, m in base.items():
        for s, o in m.items():
            inverse[name].setdefault(o, []).append(s)

    facts = set()
    for name, path in PATHS.items():
        start = _ends(path)[0]
        for e in ents[start]:
            frontier = [e]
            for b, d in path:
                frontier = [base[b][v] for v in frontier] if d > 0 else \
                    [u for v in frontier for u in inverse[b].get(v, [])]
            facts.update((e, name, o) for o in frontier)
    return ents, base, sorted(facts)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> tuple[KnowledgeGraph, list[Rule]]:
    """Graph of exactly ``spec.n_bets`` beliefs with gold accuracy near the target.

    Raises ``ValueError`` when the world is too small to supply the
    requested number of true beliefs.
    """
    rng = np.random.default_rng(spec.rng_seed)
    n = spec.n_bets
    n_false = int(round(n * (1.0 - spec.target_gold_acc)))
    n_true = n - n_false
    ents, base, facts = _world(rng, n / REFERENCE_SIZE)
    sigs = signatures()
    cat_of = {e: c for c, es in ents.items() for e in es}

    def types_of(e):
        c = cat_of[e]
        return [c] + ([SUPERTYPES[c]] if c in SUPERTYPES else [])

    # true beliefs: relation facts in random order, each bringing the type
    # beliefs of entities seen for the first time
    triples: list[tuple[str, str, str, int]] = []
    typed: set[str] = set()
    for i in rng.permutation(len(facts)):
        s, p, o = facts[i]
        new = [(e, c) for e in dict.fromkeys((s, o)) if e not in typed for c in types_of(e)]
        if len(triples) + 1 + len(new) > n_true:
            continue
        triples.append((s, p, o, 1))
        for e, c in new:
            typed.add(e)
            triples.append((e, ISA, c, 1))
        if len(triples) == n_true:
            break
    if len(triples) < n_true:
        raise ValueError(f"infeasible spec: world supplies {len(triples)} true beliefs, need {n_true}")

    present = {(s, p, o) for s, p, o, _ in triples}
    false: list[tuple[str, str, str, int]] = []
    n_swap = int(round(n_false * spec.swap_share))
    n_hub = n_false - n_swap

    # mistyped entities
    slots = [(name, side) for name in sorted(sigs) for side in (0, 1)]
    hub_cats = sorted(POPULATION)
    k = 0
    while len(false) < n_hub:
        cat = hub_cats[int(rng.integers(len(hub_cats)))]
        fake = f"fake{cat.lower()}{k:03d}"
        k += 1
        false.append((fake, ISA, cat, 0))
        room = n_hub - len(false)
        size = min(int(rng.integers(spec.hub_size[0], spec.hub_size[1] + 1)), room)
        usable = [(p, side) for p, side in slots
                  if (sigs[p].domain if side == 0 else sigs[p].range) == cat]
        for _ in range(size if usable else 0):
            p, side = usable[int(rng.integers(len(usable)))]
            other_cat = sigs[p].range if side == 0 else sigs[p].domain
            pool = sorted(e for e in ents[other_cat] if e in typed)
            if not pool:
                continue
            other = pool[int(rng.integers(len(pool)))]
            t = (fake, p, other) if side == 0 else (other, p, fake)
            if t not in present:
                present.add(t)
                false.append((*t, 0))

    # swapped objects
    relation_facts = [t for t in triples if t[1] != ISA]
    truth = set(facts)
    tries = 0
    while len(false) < n_false:
        tries += 1
        if tries > 100 * n:
            raise ValueError("infeasible spec: cannot place enough swapped-object errors")
        s, p, o, _ = relation_facts[int(rng.integers(len(relation_facts)))]
        pool = sorted(e for e in ents[sigs[p].range] if e in typed and e != o)
        if not pool:
            continue
        o2 = pool[int(rng.integers(len(pool)))]
        if (s, p, o2) in present or (s, p, o2) in truth:
            continue
        present.add((s, p, o2))
        false.append((s, p, o2, 0))

    rows = triples + false
    perm = rng.permutation(len(rows))
    bets = [BET(i, *rows[j][:3], cost=DEFAULT_COST, gold=rows[j][3]) for i, j in enumerate(perm)]
    return KnowledgeGraph(bets, sigs), synthetic_rules(spec)
