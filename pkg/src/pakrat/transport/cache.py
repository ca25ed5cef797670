"""Content-addressed on-disk cache for shards and package archives."""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

from ..errors import DigestMismatchError
from ..repodata import _atomic_write, is_sha256, sha256_hex


def default_cache_dir() -> Path:
    override = os.environ.get("PAKRAT_CACHE_DIR")
    if override:
        return Path(override)
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    return Path(base) / "pakrat"


def sha256_file(path: Path, chunk: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            block = fh.read(chunk)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


class CacheStore:
    """Entries live at ``<root>/shards/<sha256>`` and ``<root>/pkgs/<sha256>``.

    Every entry's bytes hash to its own file name. Writes go through a temp
    file and ``os.replace``, so concurrent writers of one digest are harmless:
    both write identical bytes and the last rename wins.
    """

    KINDS = ("shards", "pkgs")

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else default_cache_dir()

    def path(self, kind: str, digest: str) -> Path:
        if kind not in self.KINDS:
            raise ValueError(f"unknown cache kind {kind!r}")
        if not is_sha256(digest):
            raise ValueError(f"malformed digest {digest!r}")
        return self.root / kind / digest

    def contains(self, kind: str, digest: str) -> bool:
        return self.path(kind, digest).is_file()

    def read(self, kind: str, digest: str) -> bytes | None:
        """Cached bytes for ``digest``, or None. A corrupt entry raises."""
        path = self.path(kind, digest)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            return None
        actual = sha256_hex(data)
        if actual != digest:
            raise DigestMismatchError(f"cache entry {path}", digest, actual)
        return data

    def verified_path(self, kind: str, digest: str) -> Path | None:
        path = self.path(kind, digest)
        if not path.is_file():
            return None
        actual = sha256_file(path)
        if actual != digest:
            raise DigestMismatchError(f"cache entry {path}", digest, actual)
        return path

    def write(self, kind: str, digest: str, data: bytes) -> Path:
        actual = sha256_hex(data)
        if actual != digest:
            raise DigestMismatchError(f"{kind} entry", digest, actual)
        path = self.path(kind, digest)
        _atomic_write(path, data)
        return path

    def entries(self) -> list[Path]:
        out = []
        for kind in self.KINDS:
            d = self.root / kind
            if d.is_dir():
                out.extend(p for p in sorted(d.iterdir()) if not p.name.startswith("."))
        return out

    def fsck(self) -> list[Path]:
        """Entries whose content no longer matches their address."""
        return [p for p in self.entries() if sha256_file(p) != p.name]
