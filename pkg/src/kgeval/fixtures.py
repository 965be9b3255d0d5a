"""Bundled example data."""
from __future__ import annotations

from importlib import resources

from .kg import KnowledgeGraph, parse_signatures, parse_triples
from .rules import Rule, parse_rules


def data_path(name: str):
    return resources.files("kgeval") / "data" / name


def stadium_example() -> tuple[KnowledgeGraph, list[Rule]]:
    """The stadium/team/city fragment with two wrong beliefs out of eight."""
    triples = data_path("stadium_triples.tsv").read_text(encoding="utf-8")
    rules_text = data_path("stadium_rules.txt").read_text(encoding="utf-8")
    kg = parse_triples(triples, source="stadium_triples.tsv").with_signatures(parse_signatures(rules_text))
    return kg, parse_rules(rules_text, kg, source="stadium_rules.txt")
