"""Package resolution on top of the CDCL core.

Each candidate record becomes one boolean variable. Three kinds of input
clauses are generated lazily while the search runs:

* requirement: ``(c1 | c2 | ...)`` over the candidates matching a root spec;
* dependency: ``(-r | c1 | c2 | ...)`` for each depends entry of a record ``r``,
  generated the first time ``r`` is set true;
* exclusion: ``(-a | -b)`` for every pair of same-name candidates, generated when
  the name is first loaded from the provider.

Decisions walk the requirement/dependency clauses in creation order and try the
highest version that is still open, which is what makes resolutions prefer the
newest packages.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from ..errors import UnsatError
from ..repodata import PackageRecord
from ..version import MatchSpec, parse_spec
from .explain import UnsatExplanation
from .sat import DEPENDENCY, EXCLUSION, LEARNED, REQUIREMENT, Clause, SatState, luby

log = logging.getLogger(__name__)

RESTART_BASE = 128


class MetadataProvider(Protocol):
    def candidates_for(self, name: str) -> list[PackageRecord]:
        """Records for ``name`` ordered best-first; empty if the name is unknown."""


@dataclass
class SolveStats:
    decisions: int = 0
    conflicts: int = 0
    learned: int = 0
    restarts: int = 0
    propagations: int = 0
    loaded_names: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


@dataclass
class Solution:
    selected: dict[str, PackageRecord]
    stats: SolveStats = field(default_factory=SolveStats)

    def records(self) -> list[PackageRecord]:
        return [self.selected[n] for n in sorted(self.selected)]


def merge_roots(specs: Iterable[MatchSpec | str]) -> list[MatchSpec]:
    """Merge duplicate names by conjunction, keeping first-appearance order."""
    merged: dict[str, MatchSpec] = {}
    for spec in specs:
        if isinstance(spec, str):
            spec = parse_spec(spec)
        if not spec.name:
            raise ValueError("root requirement with empty name")
        merged[spec.name] = merged[spec.name].merge(spec) if spec.name in merged else spec
    return list(merged.values())


class Resolver:
    def __init__(self, provider: MetadataProvider):
        self.provider = provider
        self.sat = SatState()
        self.records: list[PackageRecord | None] = [None]
        self.loaded: dict[str, list[int]] = {}
        self.expanded: set[int] = set()
        self.decision_clauses: list[Clause] = []
        self.stats = SolveStats()
        self.trace: list[PackageRecord] = []
        self._queue: deque[tuple[list[int], tuple]] = deque()
        self._spec_cache: dict[str, MatchSpec] = {}

    # -- candidate universe --------------------------------------------------

    def load(self, name: str) -> list[int]:
        """Intern the candidates of ``name`` (once) and emit its exclusion clauses."""
        if name in self.loaded:
            return self.loaded[name]
        records = list(self.provider.candidates_for(name))
        variables = []
        for record in records:
            var = self.sat.new_var()
            self.records.append(record)
            variables.append(var)
        self.loaded[name] = variables
        self.stats.loaded_names += 1
        for i, a in enumerate(variables):
            for b in variables[i + 1:]:
                self._add((-a, -b), EXCLUSION, (a, b))
        return variables

    def spec(self, text: str) -> MatchSpec:
        spec = self._spec_cache.get(text)
        if spec is None:
            spec = self._spec_cache[text] = parse_spec(text)
        return spec

    def matching(self, spec: MatchSpec) -> list[int]:
        return [v for v in self.load(spec.name) if spec.matches(self.records[v].version)]

    def clauses_for_candidate(self, var: int) -> list[tuple[list[int], MatchSpec]]:
        """Literals of the dependency clauses of one candidate; loads every name it mentions."""
        record = self.records[var]
        specs = [self.spec(d) for d in record.depends]
        prefetch = getattr(self.provider, "prefetch", None)
        if prefetch is not None:
            prefetch([s.name for s in specs if s.name not in self.loaded])
        out = []
        for spec in specs:
            lits = [-var] + self.matching(spec)
            out.append((lits, spec))
        return out

    # -- clause plumbing -----------------------------------------------------

    def _add(self, lits: Sequence[int], kind: str, meta) -> Clause | None:
        clause, conflict = self.sat.add_clause(lits, kind, meta)
        if kind in (REQUIREMENT, DEPENDENCY):
            # candidate order (best first) for decisions; lits get reordered by watching
            clause.order = [l for l in lits if l > 0]
            self.decision_clauses.append(clause)
        return conflict

    def _expand_pending(self) -> Clause | None:
        # clauses are queued first so a conflict halfway through one candidate's
        # dependencies cannot drop the rest of them
        while True:
            while self._queue:
                lits, meta = self._queue.popleft()
                conflict = self._add(lits, DEPENDENCY, meta)
                if conflict is not None:
                    return conflict
            fresh = [l for l in self.sat.trail if l > 0 and l not in self.expanded]
            if not fresh:
                return None
            for lit in fresh:
                self.expanded.add(lit)
                for lits, spec in self.clauses_for_candidate(lit):
                    self._queue.append((lits, (lit, spec)))

    def _needs_decision(self, clause: Clause) -> bool:
        value = self.sat.value
        if clause.kind == DEPENDENCY and value(clause.meta[0]) is not True:
            return False
        return not any(value(l) is True for l in clause.order)

    def next_decision(self) -> int | None:
        value = self.sat.value
        for clause in self.decision_clauses:
            if self._needs_decision(clause):
                for lit in clause.order:
                    if value(lit) is None:
                        return lit
        return None

    # -- search --------------------------------------------------------------

    def _unsat(self, conflict: Clause) -> UnsatError:
        core_ids = self.sat.level0_conflict_sources(conflict)
        core = [self.sat.clauses[i] for i in sorted(core_ids)]
        return UnsatError(UnsatExplanation(core, self.records, self.loaded))

    def _handle_conflict(self, conflict: Clause) -> None:
        sat = self.sat
        while conflict is not None:
            if sat.decision_level == 0:
                raise self._unsat(conflict)
            self.stats.conflicts += 1
            learned, level, sources = sat.analyze(conflict)
            sat.backjump(level)
            _, conflict = sat.add_clause(learned, LEARNED, sources=sources)
            self.stats.learned += 1

    def require(self, roots: Iterable[MatchSpec | str]) -> None:
        for spec in merge_roots(roots):
            conflict = self._add(self.matching(spec), REQUIREMENT, spec)
            if conflict is not None:
                raise self._unsat(conflict)

    def solve(self, roots: Iterable[MatchSpec | str] = ()) -> Solution:
        sat = self.sat
        self.require(roots)
        restart_index = 1
        budget = luby(restart_index) * RESTART_BASE
        since_restart = 0
        while True:
            conflict = sat.propagate()
            if conflict is None:
                conflict = self._expand_pending()
                if conflict is None and sat.qhead < len(sat.trail):
                    continue
            if conflict is not None:
                self._handle_conflict(conflict)
                since_restart += 1
                if since_restart >= budget:
                    sat.backjump(0)
                    self.stats.restarts += 1
                    restart_index += 1
                    budget = luby(restart_index) * RESTART_BASE
                    since_restart = 0
                continue
            lit = self.next_decision()
            if lit is None:
                break
            self.stats.decisions += 1
            self.trace.append(self.records[lit])
            sat.decide(lit)

        self.stats.propagations = sat.propagations
        selected = {}
        for var in range(1, len(self.records)):
            if sat.value(var) is True:
                record = self.records[var]
                selected[record.name] = record
        return Solution(selected, self.stats)

    def assignment(self) -> dict[int, bool]:
        return {v: bool(self.sat.value(v)) for v in range(1, len(self.records))}


def solve(roots: Iterable[MatchSpec | str], provider: MetadataProvider) -> Solution:
    """Resolve ``roots`` against ``provider``; raises :class:`UnsatError` when impossible."""
    return Resolver(provider).solve(roots)
