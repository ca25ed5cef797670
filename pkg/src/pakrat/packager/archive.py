"""Deterministic package archives.

An archive is a gzip-compressed GNU tar. Everything that usually leaks the
build machine into the bytes is pinned: members are sorted by path, owners
are 0/0 with empty names, every mtime is the source date epoch, modes are
0755 or 0644, and the gzip header carries mtime 0 and no file name.
Only regular files are stored; directories are implied by member paths.
"""

from __future__ import annotations

import gzip
import io
import tarfile
from dataclasses import dataclass
from pathlib import PurePosixPath

from ..errors import IntegrityError

INFO_PREFIX = "info/"
INDEX_JSON = "info/index.json"
FILES_LIST = "info/files"
RENDERED_RECIPE = "info/recipe/rendered_recipe.yaml"


@dataclass(frozen=True)
class Member:
    path: str
    data: bytes
    executable: bool = False

    @property
    def mode(self) -> int:
        return 0o755 if self.executable else 0o644


def check_member_path(path: str) -> str:
    """Reject paths that could escape the directory an archive is extracted into."""
    pure = PurePosixPath(path)
    if (
        not path
        or "\\" in path
        or pure.is_absolute()
        or any(part in ("", ".", "..") for part in path.split("/"))
        or ":" in pure.parts[0]
    ):
        raise IntegrityError(f"unsafe archive member path {path!r}")
    return path


def write_archive(members: list[Member], mtime: int) -> bytes:
    ordered = sorted(members, key=lambda m: m.path.encode("utf-8"))
    seen = set()
    raw = io.BytesIO()
    with tarfile.open(fileobj=raw, mode="w", format=tarfile.GNU_FORMAT) as tar:
        for member in ordered:
            check_member_path(member.path)
            if member.path in seen:
                raise ValueError(f"duplicate archive member {member.path}")
            seen.add(member.path)
            info = tarfile.TarInfo(member.path)
            info.size = len(member.data)
            info.mtime = mtime
            info.mode = member.mode
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            info.type = tarfile.REGTYPE
            tar.addfile(info, io.BytesIO(member.data))
    out = io.BytesIO()
    with gzip.GzipFile(filename="", mode="wb", fileobj=out, mtime=0, compresslevel=9) as gz:
        gz.write(raw.getvalue())
    return out.getvalue()


def read_archive(data: bytes) -> list[Member]:
    """Members of an archive in stored order, validating paths and types."""
    try:
        tar_bytes = gzip.decompress(data)
        tar = tarfile.open(fileobj=io.BytesIO(tar_bytes), mode="r:")
    except (OSError, EOFError, tarfile.TarError) as exc:
        raise IntegrityError(f"unreadable package archive: {exc}") from exc
    members = []
    with tar:
        for info in tar:
            if info.isdir():
                continue
            if not info.isreg():
                raise IntegrityError(f"archive member {info.name!r} is not a regular file")
            check_member_path(info.name)
            fh = tar.extractfile(info)
            assert fh is not None
            members.append(Member(info.name, fh.read(), bool(info.mode & 0o111)))
    return members


def payload(members: list[Member]) -> list[Member]:
    return [m for m in members if not m.path.startswith(INFO_PREFIX)]


def member_map(data: bytes) -> dict[str, bytes]:
    return {m.path: m.data for m in read_archive(data)}


@dataclass(frozen=True)
class ArchiveDifference:
    """First byte at which two archives' uncompressed tar streams differ."""

    member: str | None  # None when the difference lies in end-of-archive padding
    offset: int  # offset within the member's data; -1 when inside the member header
    tar_offset: int

    def __str__(self) -> str:
        if self.member is None:
            return f"archives differ after the last member (tar offset {self.tar_offset})"
        where = "header" if self.offset < 0 else f"byte {self.offset}"
        return f"first difference in {self.member} at {where}"


def diff_archives(a: bytes, b: bytes) -> ArchiveDifference | None:
    if a == b:
        return None
    ta, tb = gzip.decompress(a), gzip.decompress(b)
    limit = min(len(ta), len(tb))
    pos = next((i for i in range(limit) if ta[i] != tb[i]), limit)
    if pos == len(ta) == len(tb):
        # identical tar streams; only the compression layer differs
        return ArchiveDifference(None, -1, pos)
    source = ta if pos < len(ta) else tb
    with tarfile.open(fileobj=io.BytesIO(source), mode="r:") as tar:
        for info in tar:
            end = info.offset_data + info.size
            if info.offset <= pos < info.offset_data:
                return ArchiveDifference(info.name, -1, pos)
            if info.offset_data <= pos < end + (-info.size % tarfile.BLOCKSIZE):
                return ArchiveDifference(info.name, pos - info.offset_data, pos)
    return ArchiveDifference(None, -1, pos)
