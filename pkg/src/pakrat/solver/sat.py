"""CDCL core: two-watched-literal propagation and first-UIP clause learning.

Literals are non-zero ints (``v`` / ``-v``). Clauses may be added at any
point of the search; :meth:`SatState.add_clause` repairs the trail so the
watch invariant keeps holding (every clause that is not satisfied watches two
non-false literals, or is unit/conflicting and has been acted upon).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

REQUIREMENT = "requirement"
DEPENDENCY = "dependency"
EXCLUSION = "exclusion"
LEARNED = "learned"
INPUT_KINDS = (REQUIREMENT, DEPENDENCY, EXCLUSION)


@dataclass(eq=False)
class Clause:
    lits: list[int]
    kind: str
    id: int = -1
    # ids of the input clauses this clause was derived from (itself, for input clauses)
    sources: frozenset[int] = field(default_factory=frozenset)
    meta: Any = None
    # decision order of the positive literals (package clauses only)
    order: list[int] | None = None

    def __repr__(self) -> str:
        return f"Clause#{self.id}({self.kind}, {self.lits})"


def luby(i: int) -> int:
    """i-th element (1-based) of the Luby sequence 1 1 2 1 1 2 4 ..."""
    k = 1
    while (1 << k) - 1 < i:
        k += 1
    while True:
        if i == (1 << k) - 1:
            return 1 << (k - 1)
        i -= (1 << (k - 1)) - 1
        k = 1
        while (1 << k) - 1 < i:
            k += 1


class SatState:
    def __init__(self) -> None:
        self.values: list[bool | None] = [None]
        self.levels: list[int] = [0]
        self.reasons: list[Clause | None] = [None]
        self.trail: list[int] = []
        self.trail_lim: list[int] = []
        self.qhead = 0
        self.watches: dict[int, list[Clause]] = {}
        self.clauses: list[Clause] = []
        self.propagations = 0
        self._level0_memo: dict[int, frozenset[int]] = {}

    # -- variables and values ------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.values) - 1

    @property
    def decision_level(self) -> int:
        return len(self.trail_lim)

    def new_var(self) -> int:
        self.values.append(None)
        self.levels.append(0)
        self.reasons.append(None)
        return len(self.values) - 1

    def value(self, lit: int) -> bool | None:
        v = self.values[abs(lit)]
        if v is None:
            return None
        return v if lit > 0 else not v

    def level(self, lit: int) -> int:
        return self.levels[abs(lit)]

    def _assign(self, lit: int, reason: Clause | None) -> None:
        var = abs(lit)
        self.values[var] = lit > 0
        self.levels[var] = self.decision_level
        self.reasons[var] = reason
        self.trail.append(lit)

    def decide(self, lit: int) -> None:
        assert self.value(lit) is None, f"deciding assigned literal {lit}"
        self.trail_lim.append(len(self.trail))
        self._assign(lit, None)

    def backjump(self, level: int) -> None:
        if level >= self.decision_level:
            return
        cut = self.trail_lim[level]
        for lit in self.trail[cut:]:
            var = abs(lit)
            self.values[var] = None
            self.reasons[var] = None
        del self.trail[cut:]
        del self.trail_lim[level:]
        self.qhead = min(self.qhead, len(self.trail))

    # -- clauses -------------------------------------------------------------

    def _watch(self, clause: Clause) -> None:
        for lit in clause.lits[:2]:
            self.watches.setdefault(lit, []).append(clause)

    def add_clause(
        self,
        lits: Iterable[int],
        kind: str,
        meta: Any = None,
        sources: frozenset[int] | None = None,
    ) -> tuple[Clause, Clause | None]:
        """Add a clause under the current partial assignment.

        Returns ``(clause, conflict)``. ``conflict`` is the clause itself when it
        is falsified by the trail even after backjumping to its highest level;
        the caller must then run conflict analysis (or report UNSAT at level 0).
        Unit and late-asserting clauses backjump and assign immediately.
        """
        lits = list(dict.fromkeys(lits))
        clause = Clause(lits, kind, len(self.clauses), meta=meta)
        clause.sources = frozenset([clause.id]) if sources is None else sources
        self.clauses.append(clause)

        def rank(lit: int) -> tuple[int, int]:
            val = self.value(lit)
            if val is None:
                return (1, 0)
            if val:
                return (0, self.level(lit))
            return (2, -self.level(lit))

        lits.sort(key=rank)
        if not lits:
            return clause, clause
        non_false = [l for l in lits if self.value(l) is not False]
        false_levels = [self.level(l) for l in lits if self.value(l) is False]
        if len(non_false) >= 2:
            self._watch(clause)
            return clause, None
        if len(non_false) == 1:
            u = lits[0]
            m = max(false_levels, default=0)
            if self.value(u) is None or self.level(u) > m:
                self.backjump(m)
                self._watch(clause)
                if self.value(u) is None:
                    self._assign(u, clause)
            else:
                self._watch(clause)
            return clause, None
        # every literal is false
        top = self.level(lits[0])
        at_top = [l for l in lits if self.level(l) == top]
        if top == 0:
            self._watch(clause)
            return clause, clause
        if len(at_top) == 1:
            second = self.level(lits[1]) if len(lits) > 1 else 0
            self.backjump(second)
            self._watch(clause)
            self._assign(lits[0], clause)
            return clause, None
        self.backjump(top)
        self._watch(clause)
        return clause, clause

    # -- propagation ---------------------------------------------------------

    def propagate(self) -> Clause | None:
        """Unit-propagate to fixpoint; return the first conflicting clause, if any."""
        while self.qhead < len(self.trail):
            p = self.trail[self.qhead]
            self.qhead += 1
            false_lit = -p
            watchers = self.watches.get(false_lit)
            if not watchers:
                continue
            kept: list[Clause] = []
            conflict = None
            i = 0
            while i < len(watchers):
                c = watchers[i]
                i += 1
                lits = c.lits
                if len(lits) == 1:
                    # unit clauses live at level 0 and are never re-triggered
                    kept.append(c)
                    if self.value(lits[0]) is False:
                        conflict = c
                        break
                    continue
                if lits[0] == false_lit:
                    lits[0], lits[1] = lits[1], lits[0]
                first = lits[0]
                if self.value(first) is True:
                    kept.append(c)
                    continue
                for k in range(2, len(lits)):
                    if self.value(lits[k]) is not False:
                        lits[1], lits[k] = lits[k], lits[1]
                        self.watches.setdefault(lits[1], []).append(c)
                        break
                else:
                    kept.append(c)
                    if self.value(first) is False:
                        conflict = c
                        break
                    self._assign(first, c)
                    self.propagations += 1
            if conflict is not None:
                kept.extend(watchers[i:])
                self.watches[false_lit] = kept
                self.qhead = len(self.trail)
                return conflict
            self.watches[false_lit] = kept
        return None

    # -- conflict analysis ---------------------------------------------------

    def level0_sources(self, var: int) -> frozenset[int]:
        """Input clause ids that force ``var``'s level-0 assignment."""
        memo = self._level0_memo
        if var in memo:
            return memo[var]
        stack = [var]
        while stack:
            v = stack[-1]
            reason = self.reasons[v]
            if reason is None:
                memo[v] = frozenset()
                stack.pop()
                continue
            pending = [abs(l) for l in reason.lits if abs(l) != v and abs(l) not in memo]
            if pending:
                stack.extend(pending)
                continue
            acc = set(reason.sources)
            for l in reason.lits:
                if abs(l) != v:
                    acc |= memo[abs(l)]
            memo[v] = frozenset(acc)
            stack.pop()
        return memo[var]

    def analyze(self, conflict: Clause) -> tuple[list[int], int, frozenset[int]]:
        """First-UIP learning. Returns (learned literals, backjump level, sources).

        The asserting literal is first in the returned list.
        """
        current = self.decision_level
        assert current > 0, "conflict analysis requires decision level >= 1"
        seen: set[int] = set()
        learned: list[int] = []
        sources = set(conflict.sources)
        counter = 0
        clause = conflict
        p = 0
        index = len(self.trail) - 1
        while True:
            for q in clause.lits:
                var = abs(q)
                if var == abs(p) or var in seen:
                    continue
                lvl = self.levels[var]
                if lvl == 0:
                    sources |= self.level0_sources(var)
                    continue
                seen.add(var)
                if lvl == current:
                    counter += 1
                else:
                    learned.append(q)
            while abs(self.trail[index]) not in seen:
                index -= 1
            p = self.trail[index]
            index -= 1
            seen.discard(abs(p))
            counter -= 1
            if counter == 0:
                break
            clause = self.reasons[abs(p)]
            assert clause is not None
            sources |= clause.sources
        learned.sort(key=lambda l: -self.level(l))
        out = [-p] + learned
        backjump = self.level(learned[0]) if learned else 0
        return out, backjump, frozenset(sources)

    def level0_conflict_sources(self, conflict: Clause) -> frozenset[int]:
        acc = set(conflict.sources)
        for lit in conflict.lits:
            if self.value(lit) is False:
                acc |= self.level0_sources(abs(lit))
        return frozenset(acc)


def propagate(state: SatState) -> Clause | None:
    return state.propagate()


def analyze_conflict(state: SatState, conflict: Clause) -> tuple[list[int], int]:
    learned, level, _ = state.analyze(conflict)
    return learned, level
