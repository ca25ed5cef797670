"""Channel metadata: package records, monolithic repodata and sharded indexes.

Every document that gets hashed is first serialized with
:func:`canonical_encode` (compact JSON, keys sorted), so two equal documents
always produce the same bytes and the same SHA256 address.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import (
    DigestMismatchError,
    EncodingError,
    RepodataError,
    UnknownPackageError,
    VersionError,
)
from .version import Version, parse_spec, parse_version

ARCHIVE_SUFFIX = ".pakrat.tar.gz"
INDEX_FORMAT_VERSION = 1
PLATFORMS = ("linux-64", "linux-aarch64", "osx-64", "osx-arm64", "win-64", "noarch")

_HEX64 = re.compile(r"[0-9a-f]{64}\Z")
_HEX32 = re.compile(r"[0-9a-f]{32}\Z")


def is_sha256(text: object) -> bool:
    return isinstance(text, str) and bool(_HEX64.match(text))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# -- canonical encoding -----------------------------------------------------


def _check_tree(node: Any, path: str = "$") -> None:
    if isinstance(node, dict):
        for key, value in node.items():
            if not isinstance(key, str):
                raise EncodingError(f"non-string map key {key!r} at {path}")
            _check_tree(value, f"{path}.{key}")
    elif isinstance(node, (list, tuple)):
        for i, value in enumerate(node):
            _check_tree(value, f"{path}[{i}]")
    elif isinstance(node, float):
        if not math.isfinite(node):
            raise EncodingError(f"non-finite number at {path}")
    elif node is None or isinstance(node, (str, int, bool)):
        pass
    else:
        raise EncodingError(f"unsupported value of type {type(node).__name__} at {path}")


def canonical_encode(document: Any) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, no whitespace, minimal escaping."""
    _check_tree(document)
    text = json.dumps(
        document, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    )
    return text.encode("utf-8")


def canonical_decode(data: bytes) -> Any:
    try:
        return json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EncodingError(f"malformed canonical document: {exc}") from exc


# -- records ----------------------------------------------------------------


@dataclass(frozen=True)
class PackageRecord:
    name: str
    version: Version
    build: str
    build_number: int = 0
    subdir: str = "noarch"
    depends: tuple[str, ...] = ()
    constrains: tuple[str, ...] = ()
    sha256: str = ""
    md5: str | None = None
    size: int = 0
    timestamp: int = 0
    license: str = ""
    # where the record was found; not part of the record's identity or encoding
    channel: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if isinstance(self.version, str):
            object.__setattr__(self, "version", parse_version(self.version))
        object.__setattr__(self, "depends", tuple(self.depends))
        object.__setattr__(self, "constrains", tuple(self.constrains))

    @property
    def filename(self) -> str:
        return f"{self.name}-{self.version.raw}-{self.build}{ARCHIVE_SUFFIX}"

    @property
    def url(self) -> str | None:
        if self.channel is None:
            return None
        return f"{self.channel}/{self.subdir}/{self.filename}"

    def validate(self) -> None:
        problems = []
        if not self.name or self.name != self.name.lower():
            problems.append(f"name {self.name!r} must be a non-empty lowercase identifier")
        if not self.build:
            problems.append("build string is empty")
        if not isinstance(self.build_number, int) or self.build_number < 0:
            problems.append(f"build_number {self.build_number!r} must be an integer >= 0")
        if not is_sha256(self.sha256):
            problems.append(f"sha256 {self.sha256!r} is not 64 lowercase hex chars")
        if self.md5 is not None and not _HEX32.match(self.md5):
            problems.append(f"md5 {self.md5!r} is not 32 lowercase hex chars")
        if not isinstance(self.size, int) or self.size < 0:
            problems.append(f"size {self.size!r} must be >= 0")
        for dep in self.depends + self.constrains:
            try:
                parse_spec(dep)
            except VersionError as exc:
                problems.append(f"bad spec {dep!r}: {exc}")
        if problems:
            raise RepodataError(f"invalid record {self.filename}: " + "; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        doc = {
            "name": self.name,
            "version": self.version.raw,
            "build": self.build,
            "build_number": self.build_number,
            "subdir": self.subdir,
            "depends": list(self.depends),
            "constrains": list(self.constrains),
            "sha256": self.sha256,
            "size": self.size,
            "timestamp": self.timestamp,
            "license": self.license,
        }
        if self.md5 is not None:
            doc["md5"] = self.md5
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], channel: str | None = None) -> PackageRecord:
        try:
            rec = cls(
                name=doc["name"],
                version=parse_version(str(doc["version"])),
                build=doc["build"],
                build_number=int(doc.get("build_number", 0)),
                subdir=doc.get("subdir", "noarch"),
                depends=tuple(doc.get("depends", ())),
                constrains=tuple(doc.get("constrains", ())),
                sha256=doc.get("sha256", ""),
                md5=doc.get("md5"),
                size=int(doc.get("size", 0)),
                timestamp=int(doc.get("timestamp", 0)),
                license=doc.get("license", ""),
                channel=channel,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RepodataError(f"malformed package record: {exc!r}") from exc
        rec.validate()
        return rec

    def with_channel(self, channel: str) -> PackageRecord:
        return replace(self, channel=channel)


def _records_from_packages(doc: Any, where: str, channel: str | None = None) -> dict[str, PackageRecord]:
    if not isinstance(doc, dict) or not isinstance(doc.get("packages"), dict):
        raise RepodataError(f"{where}: missing 'packages' map")
    out = {}
    for fn, raw in doc["packages"].items():
        rec = PackageRecord.from_dict(raw, channel)
        if rec.filename != fn:
            raise RepodataError(f"{where}: key {fn!r} does not match record filename {rec.filename!r}")
        out[fn] = rec
    return out


@dataclass
class MonolithicRepodata:
    subdir: str
    packages: dict[str, PackageRecord] = field(default_factory=dict)

    @classmethod
    def from_records(cls, subdir: str, records: Iterable[PackageRecord]) -> MonolithicRepodata:
        mono = cls(subdir)
        for rec in records:
            if rec.filename in mono.packages:
                raise RepodataError(f"duplicate filename {rec.filename}")
            mono.packages[rec.filename] = rec
        mono.validate()
        return mono

    def validate(self) -> None:
        for fn, rec in self.packages.items():
            if rec.subdir != self.subdir:
                raise RepodataError(f"record {fn} has subdir {rec.subdir!r}, expected {self.subdir!r}")
            if rec.filename != fn:
                raise RepodataError(f"key {fn!r} does not match record filename {rec.filename!r}")
            rec.validate()

    def to_document(self) -> dict[str, Any]:
        return {
            "info": {"subdir": self.subdir},
            "packages": {fn: rec.to_dict() for fn, rec in self.packages.items()},
        }

    def encode(self) -> bytes:
        return canonical_encode(self.to_document())

    @classmethod
    def decode(cls, data: bytes, channel: str | None = None) -> MonolithicRepodata:
        doc = canonical_decode(data)
        try:
            subdir = doc["info"]["subdir"]
        except (KeyError, TypeError) as exc:
            raise RepodataError("repodata.json: missing info.subdir") from exc
        mono = cls(subdir, _records_from_packages(doc, "repodata.json", channel))
        mono.validate()
        return mono


@dataclass
class Shard:
    packages: dict[str, PackageRecord] = field(default_factory=dict)

    @property
    def name(self) -> str | None:
        names = {r.name for r in self.packages.values()}
        if len(names) > 1:
            raise RepodataError(f"shard mixes package names: {sorted(names)}")
        return names.pop() if names else None

    def to_document(self) -> dict[str, Any]:
        return {"packages": {fn: rec.to_dict() for fn, rec in self.packages.items()}}

    def encode(self) -> bytes:
        return canonical_encode(self.to_document())

    def digest(self) -> str:
        return sha256_hex(self.encode())


@dataclass
class ShardIndex:
    subdir: str
    shards: dict[str, str] = field(default_factory=dict)
    version: int = INDEX_FORMAT_VERSION

    def to_document(self) -> dict[str, Any]:
        return {"version": self.version, "info": {"subdir": self.subdir}, "shards": dict(self.shards)}

    def encode(self) -> bytes:
        return canonical_encode(self.to_document())

    @classmethod
    def decode(cls, data: bytes) -> ShardIndex:
        doc = canonical_decode(data)
        if not isinstance(doc, dict):
            raise RepodataError("shard index must be a map")
        if doc.get("version") != INDEX_FORMAT_VERSION:
            raise RepodataError(f"unsupported shard index version {doc.get('version')!r}")
        try:
            subdir = doc["info"]["subdir"]
            shards = doc["shards"]
        except (KeyError, TypeError) as exc:
            raise RepodataError("shard index missing info.subdir or shards") from exc
        if not isinstance(shards, dict):
            raise RepodataError("shard index 'shards' must be a map")
        for name, digest in shards.items():
            if name != name.lower():
                raise RepodataError(f"shard index name {name!r} is not lowercase")
            if not is_sha256(digest):
                raise RepodataError(f"shard index digest for {name!r} is malformed")
        return cls(subdir, dict(shards))


def shard_channel(mono: MonolithicRepodata) -> tuple[ShardIndex, dict[str, Shard]]:
    """Split a monolithic repodata into one content-addressed shard per package name."""
    mono.validate()
    by_name: dict[str, dict[str, PackageRecord]] = {}
    for fn in sorted(mono.packages):
        rec = mono.packages[fn]
        by_name.setdefault(rec.name, {})[fn] = rec
    index = ShardIndex(mono.subdir)
    shards: dict[str, Shard] = {}
    for name in sorted(by_name):
        shard = Shard(by_name[name])
        digest = shard.digest()
        index.shards[name] = digest
        shards[digest] = shard
    return index, shards


def decode_shard(data: bytes, channel: str | None = None) -> Shard:
    doc = canonical_decode(data)
    shard = Shard(_records_from_packages(doc, "shard", channel))
    shard.name  # enforces the single-name invariant
    return shard


def verify_shard(data: bytes, expected_sha256: str, channel: str | None = None) -> Shard:
    if not is_sha256(expected_sha256):
        raise RepodataError(f"malformed expected digest {expected_sha256!r}")
    actual = sha256_hex(data)
    if actual != expected_sha256:
        raise DigestMismatchError("shard", expected_sha256, actual)
    return decode_shard(data, channel)


def candidate_order(records: Iterable[PackageRecord]) -> list[PackageRecord]:
    """Version descending, then build_number descending, then build text ascending."""
    out = sorted(records, key=lambda r: (r.build.encode(), r.filename.encode()))
    out.sort(key=lambda r: (r.version, r.build_number), reverse=True)
    return out


def lookup_candidates(shards: Mapping[str, Shard], name: str) -> list[PackageRecord]:
    """Candidates for ``name`` from a name -> shard map, best first."""
    shard = shards.get(name)
    if shard is None:
        raise UnknownPackageError(name)
    return candidate_order(shard.packages.values())


# -- on-disk channel layout -------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_subdir(subdir_dir: Path, mono: MonolithicRepodata) -> ShardIndex:
    """Write repodata.json, repodata_shards.json and shards/ for one subdir."""
    subdir_dir = Path(subdir_dir)
    index, shards = shard_channel(mono)
    _atomic_write(subdir_dir / "repodata.json", mono.encode())
    shard_dir = subdir_dir / "shards"
    shard_dir.mkdir(parents=True, exist_ok=True)
    for digest, shard in shards.items():
        target = shard_dir / f"{digest}.json"
        if not target.exists():
            _atomic_write(target, shard.encode())
    _atomic_write(subdir_dir / "repodata_shards.json", index.encode())
    return index


def load_subdir(subdir_dir: Path) -> MonolithicRepodata:
    return MonolithicRepodata.decode((Path(subdir_dir) / "repodata.json").read_bytes())
