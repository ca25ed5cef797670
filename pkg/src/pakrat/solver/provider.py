"""Metadata providers that do not touch the network."""

from __future__ import annotations

from typing import Iterable

from ..repodata import PackageRecord, candidate_order


class InMemoryProvider:
    """Serves candidates from a fixed record list and logs every lookup."""

    def __init__(self, records: Iterable[PackageRecord] = ()):
        self._by_name: dict[str, list[PackageRecord]] = {}
        for record in records:
            self._by_name.setdefault(record.name, []).append(record)
        self._sorted: dict[str, list[PackageRecord]] = {}
        self.calls: list[str] = []

    def add(self, record: PackageRecord) -> None:
        self._by_name.setdefault(record.name, []).append(record)
        self._sorted.pop(record.name, None)

    def candidates_for(self, name: str) -> list[PackageRecord]:
        self.calls.append(name)
        if name not in self._sorted:
            self._sorted[name] = candidate_order(self._by_name.get(name, []))
        return list(self._sorted[name])


class OverlayProvider:
    """Shadows whole package names of ``base`` with locally supplied records."""

    def __init__(self, base, records: Iterable[PackageRecord]):
        self.base = base
        self.local = InMemoryProvider(records)
        self._local_names = set(self.local._by_name)

    def candidates_for(self, name: str) -> list[PackageRecord]:
        if name in self._local_names:
            return self.local.candidates_for(name)
        return self.base.candidates_for(name)

    def prefetch(self, names: list[str]) -> None:
        prefetch = getattr(self.base, "prefetch", None)
        if prefetch is not None:
            prefetch([n for n in names if n not in self._local_names])
