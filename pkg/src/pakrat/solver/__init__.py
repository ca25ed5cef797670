from .explain import UnsatExplanation
from .resolve import MetadataProvider, Resolver, Solution, SolveStats, merge_roots, solve
from .sat import Clause, SatState, analyze_conflict, propagate

__all__ = [
    "Clause",
    "MetadataProvider",
    "Resolver",
    "SatState",
    "Solution",
    "SolveStats",
    "UnsatExplanation",
    "analyze_conflict",
    "merge_roots",
    "propagate",
    "solve",
]
