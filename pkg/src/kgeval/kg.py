"""Knowledge-graph data model and triples-file ingestion.

A knowledge graph here is an ordered collection of beliefs (BETs), each a
``(subject, predicate, object)`` triple with a crowd cost and an optional
gold label.  BET ids are dense integers assigned in file order so that every
downstream tie-break is deterministic.

Triples file format (UTF-8, tab separated, ``#`` comments)::

    subject <TAB> predicate <TAB> object [<TAB> gold] [<TAB> cost]

The gold column may be left empty when only a cost is given.
"""
from __future__ import annotations

import io
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import GoldIncomplete, ParseError

ISA = "isA"
DEFAULT_COST = 0.01


@dataclass(frozen=True)
class Entity:
    id: str
    surface: str


@dataclass(frozen=True)
class Predicate:
    id: str
    name: str
    domain: str | None = None
    range: str | None = None
    functional: bool = False


@dataclass(frozen=True)
class BET:
    id: int
    subject: str
    predicate: str
    object: str
    cost: float = DEFAULT_COST
    gold: int | None = None

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)


class KnowledgeGraph:
    """Immutable set of BETs plus the entity, predicate and category tables.

    Parameters
    ----------
    bets : iterable of BET
        Beliefs in id order; ids must be ``0..n-1``.
    predicates : dict, optional
        Predicate signatures keyed by name.  Predicates used by a BET but not
        listed here get a bare signature.
    categories : iterable of str, optional
        Extra declared categories.  Objects of ``isA`` beliefs are always
        categories.
    """

    def __init__(self, bets: Iterable[BET], predicates=None, categories=()):
        self.bets: tuple[BET, ...] = tuple(bets)
        self.predicates: dict[str, Predicate] = dict(predicates or {})
        self.entities: dict[str, Entity] = {}
        self._index: dict[tuple[str, str, str], int] = {}
        for i, b in enumerate(self.bets):
            if b.id != i:
                raise ValueError(f"BET ids must be dense, got {b.id} at position {i}")
            if b.triple in self._index:
                raise ValueError(f"duplicate triple {b.triple}")
            self._index[b.triple] = i
            for e in (b.subject, b.object):
                if e not in self.entities:
                    self.entities[e] = Entity(e, e)
            if b.predicate not in self.predicates:
                self.predicates[b.predicate] = Predicate(b.predicate, b.predicate)
        cats = set(categories)
        cats.update(b.object for b in self.bets if b.predicate == ISA)
        for p in self.predicates.values():
            cats.update(c for c in (p.domain, p.range) if c is not None)
        self.categories: frozenset[str] = frozenset(cats)

    def __len__(self):
        return len(self.bets)

    def __iter__(self) -> Iterator[BET]:
        return iter(self.bets)

    def __getitem__(self, i: int) -> BET:
        return self.bets[i]

    def lookup(self, subject: str, predicate: str, obj: str) -> int | None:
        return self._index.get((subject, predicate, obj))

    def by_predicate(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for b in self.bets:
            out.setdefault(b.predicate, []).append(b.id)
        return out

    @property
    def has_complete_gold(self) -> bool:
        return all(b.gold is not None for b in self.bets)

    def gold_array(self) -> np.ndarray:
        """Gold labels as an int array; raises if any BET lacks gold."""
        missing = [b.id for b in self.bets if b.gold is None]
        if missing:
            raise GoldIncomplete(
                f"gold incomplete: {len(missing)} BET(s) lack a gold label "
                f"(first id {missing[0]})"
            )
        return np.fromiter((b.gold for b in self.bets), dtype=np.int8, count=len(self.bets))

    def costs(self) -> np.ndarray:
        return np.fromiter((b.cost for b in self.bets), dtype=float, count=len(self.bets))

    def with_signatures(self, signatures: dict[str, Predicate]) -> "KnowledgeGraph":
        """Copy of the graph with predicate signatures merged in."""
        preds = dict(self.predicates)
        preds.update(signatures)
        return KnowledgeGraph(self.bets, preds, self.categories)

    def replace_bets(self, bets: Iterable[BET]) -> "KnowledgeGraph":
        return KnowledgeGraph(bets, self.predicates, self.categories)

    def to_lines(self) -> list[str]:
        lines = []
        for b in self.bets:
            gold = "" if b.gold is None else str(b.gold)
            lines.append("\t".join((b.subject, b.predicate, b.object, gold, repr(float(b.cost)))))
        return lines

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")


def parse_triples(stream, default_cost: float = DEFAULT_COST, source: str | None = None) -> KnowledgeGraph:
    """Parse a triples stream into a :class:`KnowledgeGraph`.

    ``stream`` may be an open text file, a string, or any iterable of lines.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    bets = []
    seen: dict[tuple[str, str, str], int] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = [c.strip() for c in line.split("\t")]
        if not 3 <= len(cols) <= 5:
            raise ParseError(f"expected 3 to 5 tab-separated columns, got {len(cols)}", lineno, source)
        s, p, o = cols[:3]
        if not (s and p and o):
            raise ParseError("empty subject, predicate or object", lineno, source)
        gold = None
        if len(cols) >= 4 and cols[3] != "":
            if cols[3] not in ("0", "1"):
                raise ParseError(f"gold label must be 0 or 1, got {cols[3]!r}", lineno, source)
            gold = int(cols[3])
        cost = default_cost
        if len(cols) == 5 and cols[4] != "":
            try:
                cost = float(cols[4])
            except ValueError:
                raise ParseError(f"cost is not a number: {cols[4]!r}", lineno, source) from None
            if not cost >= 0:
                raise ParseError(f"cost must be non-negative, got {cols[4]}", lineno, source)
        triple = (sys.intern(s), sys.intern(p), sys.intern(o))
        if triple in seen:
            raise ParseError(f"duplicate triple {triple} (first on line {seen[triple]})", lineno, source)
        seen[triple] = lineno
        bets.append(BET(len(bets), *triple, cost=cost, gold=gold))
    return KnowledgeGraph(bets)


def load_triples(path, default_cost: float = DEFAULT_COST) -> KnowledgeGraph:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_triples(fh, default_cost, source=str(path))


_SIG = re.compile(
    r"^@predicate\s+(?P<name>\w+)\s*(?:\(\s*(?P<dom>\w+)?\s*,\s*(?P<rng>\w+)?\s*\))?\s*(?P<flags>.*)$"
)


def parse_signatures(stream, source: str | None = None) -> dict[str, Predicate]:
    """Read ``@predicate name(Domain, Range) [functional]`` directives.

    Directives live in the rules file next to the rules; every other line is
    ignored here.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    out: dict[str, Predicate] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line.startswith("@"):
            continue
        m = _SIG.match(line)
        if m is None:
            raise ParseError(f"bad directive {line!r}", lineno, source)
        flags = m.group("flags").split()
        unknown = [f for f in flags if f != "functional"]
        if unknown:
            raise ParseError(f"unknown predicate flag(s) {unknown}", lineno, source)
        name = m.group("name")
        out[name] = Predicate(name, name, m.group("dom"), m.group("rng"), "functional" in flags)
    return out


def overall_gold_accuracy(kg: KnowledgeGraph) -> float:
    """Mean gold label over all BETs."""
    if len(kg) == 0:
        raise GoldIncomplete("gold incomplete: empty graph has no accuracy")
    return float(kg.gold_array().mean())


def predicate_gold_accuracy(kg: KnowledgeGraph) -> dict[str, float]:
    gold = kg.gold_array()
    return {p: float(gold[ids].mean()) for p, ids in sorted(kg.by_predicate().items())}


def with_gold(kg: KnowledgeGraph, gold) -> KnowledgeGraph:
    return kg.replace_bets(replace(b, gold=int(g)) for b, g in zip(kg.bets, gold))
