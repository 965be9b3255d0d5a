"""Estimate the accuracy of a knowledge graph from a small number of crowd queries.

Beliefs are coupled by grounded Horn rules; evaluating one belief lets
probabilistic soft-logic inference label others, and a greedy controller
picks the belief whose evaluation labels the most.
"""
__version__ = "0.1.0"

from .control import Strategy
from .crowd import BudgetPlan, InteractiveSource, OracleSource, SimulatedSource, WorkerModel
from .errors import BudgetExhausted, GoldIncomplete, KGEvalError, ParseError, SelectionExhausted
from .estimator import RunConfig, RunReport, run
from .inference import InferenceConfig, map_solve
from .kg import BET, KnowledgeGraph, load_triples, parse_triples
from .rules import ECG, ground, load_rules, parse_rules
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "BET", "BudgetExhausted", "BudgetPlan", "ECG", "GoldIncomplete", "InferenceConfig", "InteractiveSource",
    "KGEvalError", "KnowledgeGraph", "OracleSource", "ParseError", "RunConfig", "RunReport",
    "SelectionExhausted", "SimulatedSource", "Strategy", "SyntheticSpec", "WorkerModel", "generate_synthetic",
    "ground", "load_rules", "load_triples", "map_solve", "parse_rules", "parse_triples", "run",
]
