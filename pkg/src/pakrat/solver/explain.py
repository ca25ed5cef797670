"""Human-readable explanations for unsatisfiable resolutions."""

from __future__ import annotations

from dataclasses import dataclass, field

from .sat import DEPENDENCY, EXCLUSION, REQUIREMENT, Clause


def _label(record) -> str:
    return f"{record.name} {record.version.raw} ({record.build})"


@dataclass
class UnsatExplanation:
    """An unsatisfiable subset of the generated input clauses.

    ``clauses`` alone (without anything else the solver generated) has no
    satisfying assignment; ``render()`` draws it as a tree starting from the
    root requirements involved.
    """

    clauses: list[Clause]
    records: list = field(repr=False)
    loaded: dict[str, list[int]] = field(repr=False)

    def cnf(self) -> list[list[int]]:
        return [list(c.lits) for c in self.clauses]

    @property
    def missing_packages(self) -> list[str]:
        names = set()
        for c in self.clauses:
            spec = c.meta if c.kind == REQUIREMENT else c.meta[1] if c.kind == DEPENDENCY else None
            if spec is not None and not self.loaded.get(spec.name):
                names.add(spec.name)
        return sorted(names)

    def _available(self, name: str) -> str:
        versions = [self.records[v].version.raw for v in self.loaded.get(name, [])]
        return ", ".join(dict.fromkeys(versions))

    def _no_match(self, spec) -> str:
        if not self.loaded.get(spec.name):
            return f"no package named '{spec.name}' exists in any channel"
        return f"no version of {spec.name} matches '{spec.constraint_text()}' (available: {self._available(spec.name)})"

    def render(self) -> str:
        deps: dict[int, list[Clause]] = {}
        excl: dict[int, list[int]] = {}
        roots = []
        for c in self.clauses:
            if c.kind == REQUIREMENT:
                roots.append(c)
            elif c.kind == DEPENDENCY:
                deps.setdefault(c.meta[0], []).append(c)
            elif c.kind == EXCLUSION:
                a, b = c.meta
                excl.setdefault(a, []).append(b)
                excl.setdefault(b, []).append(a)

        lines = ["The following requirements cannot be satisfied together:"]
        shown: set[int] = set()

        def candidates(clause: Clause) -> list[int]:
            return [l for l in (clause.order or clause.lits) if l > 0]

        def node(var: int, depth: int) -> None:
            pad = "   " * depth
            record = self.records[var]
            if var in shown:
                lines.append(f"{pad}└─ {_label(record)} (see above)")
                return
            shown.add(var)
            lines.append(f"{pad}└─ {_label(record)}")
            for other in excl.get(var, []):
                lines.append(
                    f"{pad}   └─ conflicts with {_label(self.records[other])}: only one version of "
                    f"{record.name} can be installed"
                )
            for dep in deps.get(var, []):
                spec = dep.meta[1]
                options = candidates(dep)
                if not options:
                    lines.append(f"{pad}   └─ requires {spec.render()}, but {self._no_match(spec)}")
                    continue
                lines.append(f"{pad}   └─ requires {spec.render()}, which can be satisfied by:")
                for opt in options:
                    node(opt, depth + 2)

        for root in roots:
            spec = root.meta
            options = candidates(root)
            if not options:
                lines.append(f"└─ {spec.render()} (root requirement): {self._no_match(spec)}")
                continue
            lines.append(f"└─ {spec.render()} (root requirement), which can be satisfied by:")
            for opt in options:
                node(opt, 1)
        if not roots:
            for c in self.clauses:
                lines.append(f"└─ {c.kind} clause {c.lits}")
        return "\n".join(lines)
