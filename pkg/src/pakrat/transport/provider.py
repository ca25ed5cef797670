"""Metadata provider backed by remote channels (sharded or monolithic)."""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Sequence

from ..repodata import PackageRecord, ShardIndex, candidate_order
from .client import ChannelClient

SHARDED = "sharded"
MONOLITHIC = "monolithic"


def subdirs_for(platform: str) -> list[str]:
    return [platform] if platform == "noarch" else [platform, "noarch"]


class ChannelProvider:
    """Candidates for the solver, fetched on demand.

    Channel priority is strict: a name's candidates come from the first channel
    (in the given order) that has it in any searched subdir. In sharded mode
    only the shards of requested names are downloaded, and :meth:`prefetch`
    pulls several of them in parallel.
    """

    def __init__(
        self,
        channels: Sequence[str],
        platform: str,
        client: ChannelClient | None = None,
        mode: str = SHARDED,
        parallel: int = 8,
    ):
        if mode not in (SHARDED, MONOLITHIC):
            raise ValueError(f"unknown metadata mode {mode!r}")
        self.channels = [c.rstrip("/") for c in channels]
        self.platform = platform
        self.subdirs = subdirs_for(platform)
        self.client = client or ChannelClient()
        self.mode = mode
        self.parallel = parallel
        self.calls: list[str] = []
        self._indexes: dict[tuple[str, str], ShardIndex | None] = {}
        self._mono: dict[tuple[str, str], dict[str, list[PackageRecord]]] = {}
        self._shards: dict[tuple[str, str, str], list[PackageRecord]] = {}
        self._candidates: dict[str, list[PackageRecord]] = {}
        self._lock = threading.RLock()

    # -- per-subdir metadata -------------------------------------------------

    def _index(self, channel: str, subdir: str) -> ShardIndex | None:
        key = (channel, subdir)
        with self._lock:
            if key not in self._indexes:
                self._indexes[key] = self.client.fetch_index(self.client.handle(channel, subdir))
            return self._indexes[key]

    def _monolithic(self, channel: str, subdir: str) -> dict[str, list[PackageRecord]]:
        key = (channel, subdir)
        with self._lock:
            if key not in self._mono:
                repodata = self.client.fetch_repodata(self.client.handle(channel, subdir))
                grouped: dict[str, list[PackageRecord]] = {}
                for fn in sorted(repodata.packages if repodata else ()):
                    rec = repodata.packages[fn]
                    grouped.setdefault(rec.name, []).append(rec)
                self._mono[key] = grouped
            return self._mono[key]

    def _locations(self, name: str) -> list[tuple[str, str, str | None]]:
        """(channel, subdir, digest) entries holding ``name`` in its owning channel."""
        for channel in self.channels:
            found = []
            for subdir in self.subdirs:
                if self.mode == SHARDED:
                    index = self._index(channel, subdir)
                    if index is not None and name in index.shards:
                        found.append((channel, subdir, index.shards[name]))
                elif name in self._monolithic(channel, subdir):
                    found.append((channel, subdir, None))
            if found:
                return found
        return []

    def _load_shard(self, channel: str, subdir: str, name: str, digest: str) -> list[PackageRecord]:
        key = (channel, subdir, name)
        with self._lock:
            if key in self._shards:
                return self._shards[key]
        shard = self.client.fetch_shard(self.client.handle(channel, subdir), name, digest)
        records = list(shard.packages.values())
        with self._lock:
            self._shards[key] = records
        return records

    # -- provider surface ----------------------------------------------------

    def prefetch(self, names: Iterable[str]) -> None:
        if self.mode != SHARDED:
            return
        jobs = []
        for name in dict.fromkeys(names):
            if name in self._candidates:
                continue
            for channel, subdir, digest in self._locations(name):
                if (channel, subdir, name) not in self._shards:
                    jobs.append((channel, subdir, name, digest))
        if len(jobs) <= 1 or self.parallel <= 1:
            for job in jobs:
                self._load_shard(*job)
            return
        with ThreadPoolExecutor(max_workers=min(self.parallel, len(jobs))) as pool:
            # list() re-raises the first worker exception here
            list(pool.map(lambda job: self._load_shard(*job), jobs))

    def candidates_for(self, name: str) -> list[PackageRecord]:
        with self._lock:
            if name in self._candidates:
                return self._candidates[name]
        self.calls.append(name)
        records: list[PackageRecord] = []
        for channel, subdir, digest in self._locations(name):
            if self.mode == SHARDED:
                records.extend(self._load_shard(channel, subdir, name, digest))
            else:
                records.extend(self._monolithic(channel, subdir)[name])
        ordered = candidate_order(records)
        with self._lock:
            self._candidates[name] = ordered
        return ordered
