"""Lockfile (``pakrat.lock``): generation, canonical YAML form, sync checks.

The file has two sections, mirroring the layout people already know from
conda-style lockfiles: ``environments`` lists, per environment and platform,
the URLs of every package in the solved closure; ``packages`` holds one full
record per URL, shared between environments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import yaml

from .errors import LockfileError, RepodataError, UnsatError, VersionError
from .manifest import Manifest, ResolvedContext, flatten
from .repodata import PackageRecord
from .solver import solve
from .solver.provider import OverlayProvider
from .transport.client import channel_url
from .version import Exact, MatchSpec, parse_spec

log = logging.getLogger(__name__)

LOCK_NAME = "pakrat.lock"
LOCK_VERSION = 1
RECORD_KIND = "conda"
HEADER = (
    "# This file is generated by pakrat from pakrat.toml and kept in sync with it.\n"
    "# Do not edit it by hand: run `pakrat lock` instead.\n"
)
RECORD_FIELDS = (
    "kind", "name", "version", "build", "build_number", "subdir", "url", "sha256", "md5",
    "depends", "constrains", "license", "size", "timestamp",
)

ProviderFactory = Callable[[list[str], str], Any]


@dataclass
class LockedEnvironment:
    channels: list[str]
    packages: dict[str, list[str]] = field(default_factory=dict)
    system_requirements: dict[str, Any] = field(default_factory=dict)


@dataclass
class Lockfile:
    environments: dict[str, LockedEnvironment] = field(default_factory=dict)
    packages: dict[str, PackageRecord] = field(default_factory=dict)  # url -> record
    version: int = LOCK_VERSION

    def records(self, env: str, platform: str) -> list[PackageRecord]:
        try:
            urls = self.environments[env].packages[platform]
        except KeyError:
            raise LockfileError(f"lockfile has no entry for environment {env!r} on {platform}") from None
        return [self.packages[u] for u in urls]

    def pairs(self) -> list[tuple[str, str]]:
        return [(e, p) for e, env in sorted(self.environments.items()) for p in sorted(env.packages)]

    def canonicalize(self) -> Lockfile:
        envs = {}
        for name in sorted(self.environments):
            env = self.environments[name]
            envs[name] = LockedEnvironment(
                list(env.channels),
                {p: sorted(set(env.packages[p]), key=str.encode) for p in sorted(env.packages)},
                dict(env.system_requirements),
            )
        used = {u for env in envs.values() for urls in env.packages.values() for u in urls}
        packages = {u: self.packages[u] for u in sorted(used, key=str.encode)}
        return Lockfile(envs, packages, self.version)


# -- record <-> document -----------------------------------------------------


def record_document(record: PackageRecord) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "kind": RECORD_KIND,
        "name": record.name,
        "version": record.version.raw,
        "build": record.build,
    }
    if record.build_number:
        doc["build_number"] = record.build_number
    doc["subdir"] = record.subdir
    doc["url"] = record.url
    doc["sha256"] = record.sha256
    if record.md5 is not None:
        doc["md5"] = record.md5
    if record.depends:
        doc["depends"] = list(record.depends)
    if record.constrains:
        doc["constrains"] = list(record.constrains)
    if record.license:
        doc["license"] = record.license
    doc["size"] = record.size
    doc["timestamp"] = record.timestamp
    return doc


def _as_int(value: Any, what: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise LockfileError(f"{what} must be an integer, got {value!r}") from None


def _as_list(value: Any, what: str) -> list[str]:
    if value in (None, ""):
        return []
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise LockfileError(f"{what} must be a list of strings")
    return value


def record_from_document(doc: Any, where: str) -> PackageRecord:
    if not isinstance(doc, dict):
        raise LockfileError(f"{where}: expected a mapping")
    unknown = set(doc) - set(RECORD_FIELDS)
    if unknown:
        raise LockfileError(f"{where}: unknown fields {sorted(unknown)}")
    if doc.get("kind") != RECORD_KIND:
        raise LockfileError(f"{where}: unsupported package kind {doc.get('kind')!r}")
    for key in ("name", "version", "build", "subdir", "url", "sha256"):
        if not isinstance(doc.get(key), str) or not doc[key]:
            raise LockfileError(f"{where}: missing {key}")
    url = doc["url"]
    try:
        channel, subdir, filename = url.rsplit("/", 2)
        record = PackageRecord(
            name=doc["name"],
            version=doc["version"],
            build=doc["build"],
            build_number=_as_int(doc.get("build_number", 0), f"{where}.build_number"),
            subdir=doc["subdir"],
            depends=_as_list(doc.get("depends"), f"{where}.depends"),
            constrains=_as_list(doc.get("constrains"), f"{where}.constrains"),
            sha256=doc["sha256"],
            md5=doc.get("md5"),
            size=_as_int(doc.get("size", 0), f"{where}.size"),
            timestamp=_as_int(doc.get("timestamp", 0), f"{where}.timestamp"),
            license=doc.get("license", ""),
            channel=channel,
        )
        record.validate()
    except (ValueError, VersionError, RepodataError) as exc:
        raise LockfileError(f"{where}: {exc}") from None
    if filename != record.filename or subdir != record.subdir:
        raise LockfileError(f"{where}: url {url!r} does not end with {record.subdir}/{record.filename}")
    return record


# -- YAML --------------------------------------------------------------------


class _Dumper(yaml.SafeDumper):
    def increase_indent(self, flow=False, indentless=False):
        return super().increase_indent(flow, False)


def write_lockfile(lock: Lockfile) -> str:
    lock = lock.canonicalize()
    envs = {}
    for name, env in lock.environments.items():
        body: dict[str, Any] = {
            "channels": [{"url": c.rstrip("/") + "/"} for c in env.channels],
            "packages": {p: [{"conda": u} for u in urls] for p, urls in env.packages.items()},
        }
        if env.system_requirements:
            body["system-requirements"] = env.system_requirements
        envs[name] = body
    doc = {
        "version": lock.version,
        "environments": envs,
        "packages": [record_document(r) for r in lock.packages.values()],
    }
    text = yaml.dump(doc, Dumper=_Dumper, sort_keys=False, default_flow_style=False, allow_unicode=True, width=1 << 16)
    return HEADER + text


def _stringify(value: Any) -> Any:
    """Scalars become strings, matching what the string-only YAML loader reads back."""
    if isinstance(value, dict):
        return {str(k): _stringify(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_stringify(v) for v in value]
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_lockfile(text: str) -> Lockfile:
    try:
        # BaseLoader keeps every scalar a string, so "1.10" never becomes a float
        doc = yaml.load(text, Loader=yaml.BaseLoader)
    except yaml.YAMLError as exc:
        raise LockfileError(f"lockfile is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise LockfileError("lockfile must be a mapping")
    unknown = set(doc) - {"version", "environments", "packages"}
    if unknown:
        raise LockfileError(f"unknown top-level keys {sorted(unknown)}")
    version = doc.get("version")
    if version != str(LOCK_VERSION):
        raise LockfileError(f"unsupported lockfile version {version!r}")

    packages: dict[str, PackageRecord] = {}
    raw_packages = doc.get("packages") or []
    if not isinstance(raw_packages, list):
        raise LockfileError("'packages' must be a list")
    for i, raw in enumerate(raw_packages):
        record = record_from_document(raw, f"packages[{i}]")
        if record.url in packages:
            raise LockfileError(f"duplicate package url {record.url}")
        packages[record.url] = record

    envs: dict[str, LockedEnvironment] = {}
    raw_envs = doc.get("environments") or {}
    if not isinstance(raw_envs, dict):
        raise LockfileError("'environments' must be a mapping")
    for name, body in raw_envs.items():
        where = f"environments.{name}"
        if not isinstance(body, dict):
            raise LockfileError(f"{where}: expected a mapping")
        channels = []
        for entry in body.get("channels") or []:
            if not isinstance(entry, dict) or not isinstance(entry.get("url"), str):
                raise LockfileError(f"{where}.channels: entries must be '- url: ...'")
            channels.append(entry["url"].rstrip("/"))
        per_platform: dict[str, list[str]] = {}
        raw_platforms = body.get("packages") or {}
        if not isinstance(raw_platforms, dict):
            raise LockfileError(f"{where}.packages: expected a mapping of platform to list")
        for platform, entries in raw_platforms.items():
            urls = []
            seen_names: dict[str, str] = {}
            for entry in entries or []:
                if not isinstance(entry, dict) or not isinstance(entry.get("conda"), str):
                    raise LockfileError(f"{where}.packages.{platform}: entries must be '- conda: <url>'")
                url = entry["conda"]
                record = packages.get(url)
                if record is None:
                    raise LockfileError(f"{where}.packages.{platform}: no package record for {url}")
                if record.name in seen_names:
                    raise LockfileError(f"{where}.packages.{platform}: two records for {record.name!r}")
                seen_names[record.name] = url
                urls.append(url)
            per_platform[platform] = urls
        sysreq = body.get("system-requirements") or {}
        envs[name] = LockedEnvironment(channels, per_platform, _stringify(sysreq))
    return Lockfile(envs, packages, LOCK_VERSION)


def load_lockfile(path: Path | str) -> Lockfile:
    try:
        return parse_lockfile(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LockfileError(f"no lockfile at {path}") from None


def save_lockfile(lock: Lockfile, path: Path | str) -> None:
    from .repodata import _atomic_write

    _atomic_write(Path(path), write_lockfile(lock).encode("utf-8"))


# -- generation --------------------------------------------------------------


def manifest_channel_urls(manifest: Manifest, ctx: ResolvedContext) -> list[str]:
    return [channel_url(c, manifest.root) for c in ctx.channels]


def pinned_roots(ctx: ResolvedContext, local: Mapping[str, PackageRecord]) -> list[MatchSpec]:
    """Roots with every path dependency pinned exactly to its locally built record."""
    roots = []
    for spec in ctx.roots:
        if spec.name in ctx.path_dependencies:
            record = local.get(spec.name)
            if record is None:
                raise LockfileError(f"path dependency {spec.name!r} has not been built")
            spec = spec.merge(MatchSpec(spec.name, (Exact(record.version),)))
        roots.append(spec)
    return roots


def lock(
    manifest: Manifest,
    provider_factory: ProviderFactory,
    local_records: Iterable[PackageRecord] = (),
    environments: Iterable[str] | None = None,
) -> Lockfile:
    """Solve every (environment, platform) pair of ``manifest``.

    No partial result escapes: an unsatisfiable pair raises before anything is
    returned. Path dependencies must be supplied as ``local_records``.
    """
    local = {r.name: r for r in local_records}
    result = Lockfile()
    for env_name in environments or manifest.environment_names():
        env = None
        for platform in manifest.platforms:
            ctx = flatten(manifest, env_name, platform)
            channels = manifest_channel_urls(manifest, ctx)
            if env is None:
                env = LockedEnvironment(channels, {}, _stringify(ctx.system_requirements))
            provider = provider_factory(channels, platform)
            overlay = [r for r in local.values() if r.subdir in (platform, "noarch")]
            if overlay:
                provider = OverlayProvider(provider, overlay)
            try:
                solution = solve(pinned_roots(ctx, local), provider)
            except UnsatError as exc:
                raise UnsatError(exc.explanation, f"environment '{env_name}' on {platform}") from None
            urls = []
            for record in solution.records():
                if record.url is None:
                    raise LockfileError(f"solver returned {record.filename} without a channel")
                result.packages[record.url] = record
                urls.append(record.url)
            env.packages[platform] = urls
        if env is not None:
            result.environments[env_name] = env
    return result.canonicalize()


# -- checks ------------------------------------------------------------------


@dataclass
class SyncStatus:
    reasons: list[str] = field(default_factory=list)

    @property
    def fresh(self) -> bool:
        return not self.reasons

    def __str__(self) -> str:
        if self.fresh:
            return "Fresh"
        return "Stale:\n" + "\n".join(f"  - {r}" for r in self.reasons)


def _reachable(roots: Iterable[str], by_name: Mapping[str, PackageRecord]) -> set[str]:
    seen: set[str] = set()
    stack = [n for n in roots if n in by_name]
    while stack:
        name = stack.pop()
        if name in seen:
            continue
        seen.add(name)
        for dep in by_name[name].depends:
            dep_name = parse_spec(dep).name
            if dep_name in by_name and dep_name not in seen:
                stack.append(dep_name)
    return seen


def verify_sync(manifest: Manifest, lockfile: Lockfile) -> SyncStatus:
    """Fresh, or Stale with every finding.

    Findings: a root spec not satisfied by its locked record; channel list
    differing in content or order; a required (environment, platform) pair
    missing; locked names unreachable from the roots. Timestamps never count.
    """
    status = SyncStatus()
    channel_checked: set[str] = set()
    for env_name in manifest.environment_names():
        for platform in manifest.platforms:
            ctx = flatten(manifest, env_name, platform)
            env = lockfile.environments.get(env_name)
            if env is None or platform not in env.packages:
                status.reasons.append(f"missing: environment '{env_name}' on {platform} is not locked")
                continue
            wanted = manifest_channel_urls(manifest, ctx)
            if env.channels != wanted and env_name not in channel_checked:
                channel_checked.add(env_name)
                kind = "channel-order" if sorted(env.channels) == sorted(wanted) else "channels"
                status.reasons.append(
                    f"{kind}: environment '{env_name}' locked with {env.channels}, manifest wants {wanted}"
                )
            by_name = {r.name: r for r in lockfile.records(env_name, platform)}
            for spec in ctx.roots:
                record = by_name.get(spec.name)
                if record is None:
                    status.reasons.append(f"root-unsatisfied: {env_name}/{platform}: {spec.render()} is not locked")
                elif not spec.matches(record.version):
                    status.reasons.append(
                        f"root-unsatisfied: {env_name}/{platform}: {spec.render()} (locked {record.version.raw})"
                    )
            extra = set(by_name) - _reachable((s.name for s in ctx.roots), by_name)
            for name in sorted(extra):
                status.reasons.append(f"extraneous: {env_name}/{platform}: {name} is not required by any root")
    return status


@dataclass(frozen=True)
class ClosureViolation:
    env: str
    platform: str
    record: str
    spec: str

    def __str__(self) -> str:
        return f"{self.env}/{self.platform}: {self.record} requires '{self.spec}', which nothing locked satisfies"


def check_closure(lockfile: Lockfile) -> list[ClosureViolation]:
    """Every depends entry of every locked record is met within its own list."""
    violations = []
    for env_name, platform in lockfile.pairs():
        records = lockfile.records(env_name, platform)
        by_name = {r.name: r for r in records}
        for record in records:
            for dep in record.depends:
                spec = parse_spec(dep)
                target = by_name.get(spec.name)
                if target is None or not spec.matches(target.version):
                    violations.append(ClosureViolation(env_name, platform, record.filename, dep))
    return violations
