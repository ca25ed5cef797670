"""Package versions and match specs.

A version is a dot-separated list of segments, each a run of digits
followed by an optional lowercase suffix (``2.0a0`` -> ``(2,""), (0,"a0")``).
Versions compare segment-wise after padding the shorter one with ``(0, "")``;
within a segment the number decides first, then the suffix, where an empty
suffix sorts after every non-empty one.

A match spec is a package name plus a comma-separated conjunction of
constraints: ``*``, an exact version, a ``X.Y.*`` prefix wildcard, or a
relational comparison (``<``, ``<=``, ``>``, ``>=``, ``!=``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Union

from .errors import VersionError

_SEGMENT_RE = re.compile(r"([0-9]+)([a-z][a-z0-9]*)?\Z")
_NAME_RE = re.compile(r"[a-z0-9_][a-z0-9_.\-]*\Z")
_RELATIONAL_OPS = ("<=", ">=", "!=", "==", "<", ">")

Segment = tuple[int, str]
_PAD: Segment = (0, "")


def _segment_key(seg: Segment) -> tuple[int, int, str]:
    # empty suffix ranks above any suffix
    num, suffix = seg
    return (num, 1, "") if not suffix else (num, 0, suffix)


@total_ordering
class Version:
    """An ordered, immutable package version."""

    __slots__ = ("raw", "segments", "_norm")

    def __init__(self, raw: str, segments: tuple[Segment, ...]):
        self.raw = raw
        self.segments = segments
        norm = list(segments)
        while norm and norm[-1] == _PAD:
            norm.pop()
        self._norm = tuple(norm)

    def __repr__(self) -> str:
        return f"Version({self.raw!r})"

    def __str__(self) -> str:
        return self.raw

    def __hash__(self) -> int:
        return hash(self._norm)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self._norm == other._norm

    def __lt__(self, other: Version) -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return compare(self, other) < 0

    def padded(self, length: int) -> tuple[Segment, ...]:
        return self.segments + (_PAD,) * (length - len(self.segments))


def parse_version(text: str) -> Version:
    if not isinstance(text, str) or not text:
        raise VersionError("empty version string")
    segments = []
    for index, part in enumerate(text.split(".")):
        if not part:
            raise VersionError(f"empty segment at index {index} in version {text!r}")
        m = _SEGMENT_RE.match(part)
        if m is None:
            raise VersionError(f"illegal characters in segment {index} ({part!r}) of version {text!r}")
        segments.append((int(m.group(1)), m.group(2) or ""))
    return Version(text, tuple(segments))


def compare(a: Version, b: Version) -> int:
    """Return -1, 0 or 1 as ``a`` sorts before, equal to, or after ``b``."""
    n = max(len(a.segments), len(b.segments))
    for sa, sb in zip(a.padded(n), b.padded(n)):
        ka, kb = _segment_key(sa), _segment_key(sb)
        if ka != kb:
            return -1 if ka < kb else 1
    return 0


# -- constraints ------------------------------------------------------------


@dataclass(frozen=True)
class Any_:
    def holds(self, v: Version) -> bool:
        return True

    def render(self) -> str:
        return "*"


@dataclass(frozen=True)
class Exact:
    version: Version

    def holds(self, v: Version) -> bool:
        return compare(v, self.version) == 0

    def render(self) -> str:
        return self.version.raw


@dataclass(frozen=True)
class Wildcard:
    prefix: Version

    def holds(self, v: Version) -> bool:
        n = len(self.prefix.segments)
        return v.padded(max(n, len(v.segments)))[:n] == self.prefix.segments

    def render(self) -> str:
        return self.prefix.raw + ".*"


@dataclass(frozen=True)
class Relational:
    op: str
    version: Version

    def holds(self, v: Version) -> bool:
        c = compare(v, self.version)
        return {
            "<": c < 0,
            "<=": c <= 0,
            ">": c > 0,
            ">=": c >= 0,
            "!=": c != 0,
        }[self.op]

    def render(self) -> str:
        return self.op + self.version.raw


Constraint = Union[Any_, Exact, Wildcard, Relational]
ANY = Any_()


@dataclass(frozen=True)
class MatchSpec:
    name: str
    constraints: tuple[Constraint, ...] = (ANY,)
    # build-string patterns are carried verbatim but never evaluated
    build: str | None = field(default=None, compare=False)

    def __str__(self) -> str:
        return self.render()

    def render(self) -> str:
        body = self.constraint_text()
        out = self.name if body == "*" else f"{self.name} {body}"
        if self.build is not None:
            out = f"{self.name} {body} {self.build}"
        return out

    def constraint_text(self) -> str:
        return ",".join(c.render() for c in self.constraints)

    def matches(self, v: Version | str) -> bool:
        return matches(self, v)

    def merge(self, other: MatchSpec) -> MatchSpec:
        """Conjunction of two specs on the same package."""
        if other.name != self.name:
            raise VersionError(f"cannot merge specs for {self.name!r} and {other.name!r}")
        merged = [c for c in self.constraints + other.constraints if c != ANY]
        deduped = tuple(dict.fromkeys(merged)) or (ANY,)
        return MatchSpec(self.name, deduped, self.build or other.build)


def _parse_constraint(text: str, spec_text: str) -> Constraint:
    if not text:
        raise VersionError(f"empty conjunct in spec {spec_text!r}")
    if text == "*":
        return ANY
    if "|" in text:
        raise VersionError(f"alternatives ('|') are not supported: {spec_text!r}")
    op = ""
    for candidate in _RELATIONAL_OPS:
        if text.startswith(candidate):
            op = candidate
            break
    rest = text[len(op):].strip()
    if not op and rest[:1] in ("~", "^", "=", "<", ">", "!"):
        raise VersionError(f"unknown operator in {text!r} (spec {spec_text!r})")
    if rest[:1] in ("~", "^", "=", "<", ">", "!"):
        raise VersionError(f"unknown operator in {text!r} (spec {spec_text!r})")
    if "*" in rest:
        if op not in ("", "=="):
            raise VersionError(f"wildcard cannot be combined with {op!r} in {spec_text!r}")
        if rest == "*":
            return ANY
        if not rest.endswith(".*") or "*" in rest[:-2]:
            raise VersionError(f"wildcard must be the terminal segment in {text!r}")
        return Wildcard(parse_version(rest[:-2]))
    version = parse_version(rest)
    if op in ("", "=="):
        return Exact(version)
    return Relational(op, version)


def _split_conjuncts(body: str, spec_text: str) -> tuple[list[str], str | None]:
    parts = [p.strip() for p in body.split(",")]
    build = None
    # a build pattern may trail the last conjunct, separated by whitespace
    last = re.sub(r"(<=|>=|!=|==|<|>)\s+", r"\1", parts[-1])
    pieces = last.split()
    if len(pieces) == 2:
        parts[-1], build = pieces
    elif len(pieces) > 2:
        raise VersionError(f"unexpected tokens in spec {spec_text!r}")
    else:
        parts[-1] = last
    cleaned = [re.sub(r"(<=|>=|!=|==|<|>)\s+", r"\1", p) for p in parts]
    for p in cleaned:
        if p and len(p.split()) > 1:
            raise VersionError(f"unexpected whitespace in conjunct {p!r} of {spec_text!r}")
    return cleaned, build


def parse_spec(text: str, name: str | None = None) -> MatchSpec:
    """Parse ``"name constraints"``, or just ``"constraints"`` when ``name`` is given.

    >>> parse_spec("bzip2 >=1.0.8, <2.0a0").render()
    'bzip2 >=1.0.8,<2.0a0'
    """
    if not isinstance(text, str):
        raise VersionError(f"spec must be a string, got {type(text).__name__}")
    stripped = text.strip()
    if name is None:
        if not stripped:
            raise VersionError("empty match spec")
        head, _, body = stripped.partition(" ")
        # "name>=1.0" without a space
        m = re.match(r"([A-Za-z0-9_][A-Za-z0-9_.\-]*)(.*)\Z", head)
        if m is None:
            raise VersionError(f"invalid package name in spec {text!r}")
        pkg, glued = m.group(1), m.group(2)
        if glued:
            body = (glued + " " + body).strip()
        body = body.strip()
    else:
        pkg, body = name, stripped
    pkg = pkg.lower()
    if not _NAME_RE.match(pkg):
        raise VersionError(f"invalid package name {pkg!r}")
    if not body:
        return MatchSpec(pkg)
    conjuncts, build = _split_conjuncts(body, text)
    constraints = tuple(_parse_constraint(c, text) for c in conjuncts)
    if len(constraints) > 1:
        constraints = tuple(c for c in constraints if c != ANY) or (ANY,)
    return MatchSpec(pkg, constraints, build)


def matches(spec: MatchSpec, v: Version | str) -> bool:
    if isinstance(v, str):
        v = parse_version(v)
    return all(c.holds(v) for c in spec.constraints)
