"""Desk-scale benchmarks: sharded versus monolithic metadata on generated channels.

A universe has a small *closure* (the names reachable from the roots) hidden in
a large set of unrelated filler names, which is the situation where lazy,
per-name shard fetching pays off. Generation is a pure function of the universe spec,
so the same seed always produces the same channel bytes and byte counts.
Wall-clock times are reported but carry no guarantees.
"""

from __future__ import annotations

import random
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .repodata import MonolithicRepodata, PackageRecord, sha256_hex, write_subdir
from .solver import solve
from .transport import MONOLITHIC, SHARDED, CacheStore, ChannelClient, ChannelProvider, serve

BENCH_PLATFORM = "linux-64"


@dataclass(frozen=True)
class BenchUniverseSpec:
    name: str
    seed: int
    names: int
    versions_per_name: int
    closure: int  # names reachable from the roots, roots included
    roots: int
    dep_degree: int  # extra dependency edges per record, at most
    conflict_rate: float  # share of older records' dependencies that carry an upper bound

    def __post_init__(self):
        if not 1 <= self.roots <= self.closure <= self.names:
            raise ValueError("need 1 <= roots <= closure <= names")
        if self.versions_per_name < 1:
            raise ValueError("versions_per_name must be >= 1")


PRESETS = {
    "micro": BenchUniverseSpec("micro", seed=1, names=1000, versions_per_name=3, closure=10, roots=1, dep_degree=2, conflict_rate=0.1),
    "dummy": BenchUniverseSpec("dummy", seed=2, names=2000, versions_per_name=4, closure=60, roots=7, dep_degree=3, conflict_rate=0.2),
    "stress": BenchUniverseSpec("stress", seed=3, names=3000, versions_per_name=6, closure=300, roots=3, dep_degree=5, conflict_rate=0.3),
}


@dataclass
class Universe:
    spec: BenchUniverseSpec
    records: list[PackageRecord]
    roots: list[str]
    closure_names: list[str]


def _record(name: str, version: int, depends: list[str], seed: int) -> PackageRecord:
    return PackageRecord(
        name=name,
        version=f"{version}.0",
        build="h0_0",
        subdir=BENCH_PLATFORM,
        depends=tuple(depends),
        sha256=sha256_hex(f"{seed}/{name}/{version}".encode()),
        size=1000 + version,
        timestamp=1_700_000_000_000,
        license="MIT",
    )


def _deps_for(rnd: random.Random, required: list[str], optional: list[str], newest: bool, spec: BenchUniverseSpec) -> list[str]:
    # the newest version of every name satisfies every lower bound, so picking
    # the newest of everything is always a solution
    chosen = list(required)
    extra = [n for n in optional if n not in chosen]
    chosen += rnd.sample(extra, min(len(extra), rnd.randint(0, spec.dep_degree)))
    out = []
    for dep in chosen:
        if not newest and rnd.random() < spec.conflict_rate:
            out.append(f"{dep} <{rnd.randint(2, spec.versions_per_name + 1)}")
        else:
            out.append(f"{dep} >={rnd.randint(1, spec.versions_per_name)}")
    return out


def generate_universe(spec: BenchUniverseSpec) -> Universe:
    rnd = random.Random(spec.seed)
    all_names = [f"pkg-{i:05d}" for i in range(spec.names)]
    rnd.shuffle(all_names)
    closure, filler = all_names[: spec.closure], all_names[spec.closure:]
    # every closure name below the roots hangs off an earlier closure name in every version
    parents: dict[str, list[str]] = {n: [] for n in closure}
    for i in range(spec.roots, spec.closure):
        parents[closure[rnd.randrange(i)]].append(closure[i])
    records = []
    for group in (closure, filler):
        for i, name in enumerate(group):
            later = group[i + 1:]
            for v in range(1, spec.versions_per_name + 1):
                newest = v == spec.versions_per_name
                deps = _deps_for(rnd, parents.get(name, []), later[:50], newest, spec)
                records.append(_record(name, v, deps, spec.seed))
    return Universe(spec, records, closure[: spec.roots], sorted(closure))


def write_universe(universe: Universe, root: Path | str) -> Path:
    root = Path(root)
    write_subdir(root / BENCH_PLATFORM, MonolithicRepodata.from_records(BENCH_PLATFORM, universe.records))
    return root


@dataclass
class BenchReport:
    preset: str
    mode: str
    run: int
    warm: bool
    solve_seconds: float
    requests: int
    bytes_downloaded: int
    shard_gets: int
    cache_hits: int
    selected: int
    solver: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def run_bench(
    spec: BenchUniverseSpec | str,
    modes: tuple[str, ...] = (SHARDED, MONOLITHIC),
    runs: int = 2,
    workdir: Path | str | None = None,
) -> list[BenchReport]:
    """Serve the universe locally and solve its roots ``runs`` times per mode.

    The first run of a mode starts from an empty cache; later runs reuse it.
    """
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise ValueError(f"unknown bench preset {spec!r} (choose from {', '.join(PRESETS)})")
        spec = PRESETS[spec]
    universe = generate_universe(spec)
    reports = []
    with tempfile.TemporaryDirectory(prefix="pakrat-bench-", dir=workdir) as tmp:
        channel = write_universe(universe, Path(tmp) / "channel")
        with serve(channel) as server:
            for mode in modes:
                cache = CacheStore(Path(tmp) / f"cache-{mode}")
                for run in range(runs):
                    server.clear_log()
                    client = ChannelClient(cache)
                    provider = ChannelProvider([server.url], BENCH_PLATFORM, client, mode)
                    started = time.perf_counter()
                    solution = solve(universe.roots, provider)
                    elapsed = time.perf_counter() - started
                    metrics = client.metrics.as_dict()
                    reports.append(BenchReport(
                        preset=spec.name,
                        mode=mode,
                        run=run,
                        warm=run > 0,
                        solve_seconds=round(elapsed, 6),
                        requests=metrics["requests"],
                        bytes_downloaded=metrics["bytes_downloaded"],
                        shard_gets=len(server.gets("/shards/")),
                        cache_hits=metrics["cache_hits"],
                        selected=len(solution.selected),
                        solver=solution.stats.as_dict(),
                    ))
    return reports
