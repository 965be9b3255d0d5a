"""Weighted coupling constraints and their grounding into an ECG.

Rules file lines look like::

    0.9: homeStadiumOf(x,y) -> isA(y,"SportsTeam")
    0.8: homeStadiumOf(x,y) & homeCity(y,z) -> stadiumLocatedInCity(x,z)

Variables are lowercase identifiers, constants are double-quoted.  Lines
starting with ``#`` are comments and ``@`` lines are predicate directives
read by :func:`kgeval.kg.parse_signatures`.

Grounding instantiates every rule against the BETs of a graph.  A rule
instance is kept only when all body atoms *and* the head match existing
BETs; the resulting bipartite factor graph of BET nodes and constraint
nodes is the evaluation coupling graph (:class:`ECG`).
"""
from __future__ import annotations

import io
import itertools
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ParseError
from .kg import ISA, KnowledgeGraph

TYPE_CONSTRAINT = "typeConstraint"
HORN_CLAUSE = "hornClause"


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    value: str

    def __str__(self):
        return f'"{self.value}"'


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple  # (subject, object), each Var or Const

    def variables(self) -> set[str]:
        return {a.name for a in self.args if isinstance(a, Var)}

    def __str__(self):
        return f"{self.predicate}({','.join(map(str, self.args))})"


@dataclass(frozen=True)
class Rule:
    id: int
    body: tuple[Atom, ...]
    head: Atom
    weight: float
    kind: str

    @property
    def body_length(self) -> int:
        return len(self.body)

    def __str__(self):
        return f"{self.weight!r}: {' & '.join(map(str, self.body))} -> {self.head}"


@dataclass(frozen=True)
class GroundedConstraint:
    id: int
    rule: int
    body: tuple[int, ...]
    head: int
    weight: float

    @property
    def domain(self) -> tuple[int, ...]:
        return self.body + (self.head,)


_ATOM = re.compile(r'\s*([A-Za-z_]\w*)\s*\(\s*("[^"]*"|[^,()\s]+)\s*,\s*("[^"]*"|[^,()\s]+)\s*\)\s*')
_VAR = re.compile(r"[a-z_][A-Za-z0-9_]*$")


def _parse_term(tok: str, lineno, source):
    if tok.startswith('"'):
        return Const(tok[1:-1])
    if _VAR.match(tok):
        return Var(tok)
    raise ParseError(f"bad term {tok!r}: variables are lowercase, constants are quoted", lineno, source)


def _parse_atom(text: str, lineno, source) -> Atom:
    m = _ATOM.fullmatch(text)
    if m is None:
        raise ParseError(f"bad atom {text.strip()!r}", lineno, source)
    return Atom(m.group(1), (_parse_term(m.group(2), lineno, source), _parse_term(m.group(3), lineno, source)))


def make_rule(rule_id: int, body: Sequence[Atom], head: Atom, weight: float) -> Rule:
    if not weight >= 0:
        raise ValueError(f"rule weight must be non-negative, got {weight}")
    if not body:
        raise ValueError("rule body must have at least one atom")
    missing = head.variables() - set().union(*(a.variables() for a in body))
    if missing:
        raise ValueError(f"head variable(s) {sorted(missing)} do not appear in the body")
    kind = TYPE_CONSTRAINT if len(body) == 1 and head.predicate == ISA else HORN_CLAUSE
    return Rule(rule_id, tuple(body), head, float(weight), kind)


def parse_rules(stream, kg: KnowledgeGraph | None = None, source: str | None = None) -> list[Rule]:
    """Parse a rules stream.

    When ``kg`` is given, every predicate named by a rule must exist in it.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    known = None if kg is None else set(kg.predicates)
    rules: list[Rule] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("@"):
            continue
        wtext, sep, rest = line.partition(":")
        if not sep or "->" not in rest:
            raise ParseError(f"expected 'weight: body -> head', got {line!r}", lineno, source)
        try:
            weight = float(wtext)
        except ValueError:
            raise ParseError(f"bad weight {wtext.strip()!r}", lineno, source) from None
        body_text, _, head_text = rest.partition("->")
        body = [_parse_atom(t, lineno, source) for t in body_text.split("&")]
        head = _parse_atom(head_text, lineno, source)
        if known is not None:
            for atom in body + [head]:
                if atom.predicate not in known:
                    raise ParseError(f"unknown predicate {atom.predicate!r}", lineno, source)
        try:
            rules.append(make_rule(len(rules), body, head, weight))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None
    return rules


def load_rules(path, kg: KnowledgeGraph | None = None) -> list[Rule]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh, kg, source=str(path))


def format_rules(rules: Sequence[Rule]) -> list[str]:
    return [str(r) for r in rules]


def type_rules(kg: KnowledgeGraph, weight: float = 1.0) -> list[Rule]:
    """Type-consistency rules generated from predicate signatures."""
    x, y = Var("x"), Var("y")
    out: list[Rule] = []
    for name in sorted(kg.predicates):
        p = kg.predicates[name]
        if p.name == ISA:
            continue
        body = (Atom(p.name, (x, y)),)
        if p.domain is not None:
            out.append(make_rule(len(out), body, Atom(ISA, (x, Const(p.domain))), weight))
        if p.range is not None:
            out.append(make_rule(len(out), body, Atom(ISA, (y, Const(p.range))), weight))
    return out


def renumber(rules: Sequence[Rule]) -> list[Rule]:
    return [Rule(i, r.body, r.head, r.weight, r.kind) for i, r in enumerate(rules)]


class ECG:
    """Evaluation coupling graph: BET nodes, grounded-constraint nodes, edges.

    Besides the incidence lists the graph keeps a sparse signed incidence
    matrix ``A`` (``+1`` for body membership, ``-1`` for the head) and an
    offset vector so that the Lukasiewicz hinge of constraint ``j`` is
    ``max(0, (A @ x)[j] + offset[j])``.
    """

    def __init__(self, n_bets: int, constraints: Sequence[GroundedConstraint]):
        self.n_bets = int(n_bets)
        self.constraints: tuple[GroundedConstraint, ...] = tuple(constraints)
        inc: list[list[int]] = [[] for _ in range(self.n_bets)]
        for j, c in enumerate(self.constraints):
            if c.id != j:
                raise ValueError(f"constraint ids must equal positions, got {c.id} at {j}")
            if not c.body:
                raise ValueError(f"constraint {c.id} has an empty body")
            if c.head in c.body:
                raise ValueError(f"constraint {c.id} has its head in its body")
            for h in c.domain:
                if not 0 <= h < self.n_bets:
                    raise ValueError(f"constraint {c.id} references unknown BET {h}")
                inc[h].append(c.id)
        self.incidence: tuple[tuple[int, ...], ...] = tuple(tuple(ids) for ids in inc)
        self.degrees = np.array([len(ids) for ids in inc], dtype=np.int64)

        rows, cols, vals = [], [], []
        for j, c in enumerate(self.constraints):
            for h in c.body:
                rows.append(j)
                cols.append(h)
                vals.append(1.0)
            rows.append(j)
            cols.append(c.head)
            vals.append(-1.0)
        m = len(self.constraints)
        self.A = sp.csr_matrix((vals, (rows, cols)), shape=(m, self.n_bets))
        self.AT = self.A.T.tocsr()
        # unsigned membership, for counting and neighbourhood queries
        self.B = abs(self.A).tocsr()
        self.BT = self.B.T.tocsr()
        self.body = (self.A > 0).astype(float).tocsr()
        self.bodyT = self.body.T.tocsr()
        self.heads = np.array([c.head for c in self.constraints], dtype=np.int64)
        self.body_sizes = np.array([len(c.body) for c in self.constraints], dtype=np.int64)
        self.offsets = np.array([-(len(c.body) - 1.0) for c in self.constraints])
        self.weights = np.array([c.weight for c in self.constraints], dtype=float)

    def __len__(self):
        return len(self.constraints)

    def degree(self, h: int) -> int:
        if not 0 <= h < self.n_bets:
            raise IndexError(f"no BET with id {h}")
        return int(self.degrees[h])

    def edges(self) -> list[tuple[int, int]]:
        """Edges as ``(constraint id, BET id)`` pairs."""
        return [(c.id, h) for c in self.constraints for h in c.domain]

    def neighbors(self, h: int) -> set[int]:
        out: set[int] = set()
        for j in self.incidence[h]:
            out.update(self.constraints[j].domain)
        out.discard(h)
        return out

    def to_json(self, rules: Sequence[Rule] | None = None) -> dict:
        doc = {
            "bets": self.n_bets,
            "constraints": [
                {"id": c.id, "rule": c.rule, "body": list(c.body), "head": c.head, "weight": c.weight}
                for c in self.constraints
            ],
        }
        if rules is not None:
            doc["rules"] = [str(r) for r in rules]
        return doc

    def dump(self, path, rules=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(rules), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _match_atom(kg_index, atom: Atom, binding: dict[str, str]):
    """Yield ``(bet id, extended binding)`` for BETs matching ``atom``."""
    by_pred, by_ps, by_po, exact = kg_index
    s_term, o_term = atom.args
    s = s_term.value if isinstance(s_term, Const) else binding.get(s_term.name)
    o = o_term.value if isinstance(o_term, Const) else binding.get(o_term.name)
    if s is not None and o is not None:
        h = exact.get((s, atom.predicate, o))
        candidates = () if h is None else ((h, s, o),)
    elif s is not None:
        candidates = by_ps.get((atom.predicate, s), ())
    elif o is not None:
        candidates = by_po.get((atom.predicate, o), ())
    else:
        candidates = by_pred.get(atom.predicate, ())
    for h, cs, co in candidates:
        new = dict(binding)
        for term, val in ((s_term, cs), (o_term, co)):
            if isinstance(term, Var) and new.setdefault(term.name, val) != val:
                break  # repeated variable bound to two different entities
        else:
            yield h, new


def _index(kg: KnowledgeGraph):
    by_pred: dict[str, list] = {}
    by_ps: dict[tuple, list] = {}
    by_po: dict[tuple, list] = {}
    exact: dict[tuple, int] = {}
    for b in kg.bets:
        rec = (b.id, b.subject, b.object)
        by_pred.setdefault(b.predicate, []).append(rec)
        by_ps.setdefault((b.predicate, b.subject), []).append(rec)
        by_po.setdefault((b.predicate, b.object), []).append(rec)
        exact[b.triple] = b.id
    return by_pred, by_ps, by_po, exact


def ground_rule(kg: KnowledgeGraph, rule: Rule, index=None) -> set[tuple[tuple[int, ...], int]]:
    """All ``(sorted body BET ids, head BET id)`` instances of one rule."""
    index = index or _index(kg)
    partial = [({}, ())]
    for atom in rule.body:
        nxt = []
        for binding, ids in partial:
            for h, new in _match_atom(index, atom, binding):
                nxt.append((new, ids + (h,)))
        partial = nxt
        if not partial:
            return set()
    out = set()
    exact = index[3]
    for binding, ids in partial:
        s, o = (a.value if isinstance(a, Const) else binding[a.name] for a in rule.head.args)
        head = exact.get((s, rule.head.predicate, o))
        if head is None:
            continue
        body = tuple(sorted(set(ids)))
        if head in body:
            continue
        out.add((body, head))
    return out


def ground(kg: KnowledgeGraph, rules: Sequence[Rule]) -> ECG:
    """Instantiate ``rules`` over ``kg`` and build the coupling graph.

    Constraints are ordered by rule id, then body ids, then head id, and
    numbered in that order, so the output does not depend on rule-file
    iteration details.  Instances repeated within a rule are merged;
    identical instances of different rules are kept.
    """
    index = _index(kg)
    keyed = []
    for rule in rules:
        for body, head in ground_rule(kg, rule, index):
            keyed.append((rule.id, body, head, rule.weight))
    keyed.sort(key=lambda t: (t[0], t[1], t[2]))
    constraints = [GroundedConstraint(j, r, b, h, w) for j, (r, b, h, w) in enumerate(keyed)]
    return ECG(len(kg), constraints)


def brute_force_ground(kg: KnowledgeGraph, rules: Sequence[Rule]) -> set[tuple[int, tuple[int, ...], int]]:
    """Reference grounding by enumerating every entity tuple.

    Exponential in the number of rule variables; only for small graphs.
    """
    entities = sorted(kg.entities)
    out = set()
    for rule in rules:
        names = sorted(set().union(*(a.variables() for a in rule.body)))
        for values in itertools.product(entities, repeat=len(names)):
            binding = dict(zip(names, values))

            def resolve(atom):
                s, o = (a.value if isinstance(a, Const) else binding[a.name] for a in atom.args)
                return kg.lookup(s, atom.predicate, o)

            body = [resolve(a) for a in rule.body]
            head = resolve(rule.head)
            if head is None or any(b is None for b in body):
                continue
            body_ids = tuple(sorted(set(body)))
            if head in body_ids:
                continue
            out.add((rule.id, body_ids, head))
    return out


def random_ecg(rng, n_bets: int, n_constraints: int, max_body: int = 2,
               weight_range=(0.5, 1.0)) -> ECG:
    """Random coupling graph for property tests and probes.

    Each constraint draws a body of 1..``max_body`` distinct BETs and a head
    outside the body.  Duplicates of an earlier constraint are skipped.
    """
    if n_bets < 2:
        return ECG(n_bets, [])
    seen = set()
    cons = []
    for _ in range(n_constraints):
        m = int(rng.integers(1, min(max_body, n_bets - 1) + 1))
        picks = rng.choice(n_bets, size=m + 1, replace=False)
        body = tuple(sorted(int(v) for v in picks[:m]))
        head = int(picks[m])
        if (body, head) in seen:
            continue
        seen.add((body, head))
        w = float(rng.uniform(*weight_range))
        cons.append(GroundedConstraint(len(cons), m - 1, body, head, w))
    return ECG(n_bets, cons)
