"""Channel client: token handshake, index/shard/package fetch with caching.

Channels are addressed by base URL (``http``, ``https`` or ``file``). Bare
channel names such as ``conda-forge`` are joined onto ``PAKRAT_CHANNEL_ALIAS``
and local directories are turned into ``file://`` URLs.
"""

from __future__ import annotations

import gzip
import logging
import os
import threading
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlparse
from urllib.request import url2pathname

from ..errors import AuthError, DigestMismatchError, IntegrityError, RepodataError, TransportError
from ..repodata import MonolithicRepodata, PackageRecord, Shard, ShardIndex, sha256_hex, verify_shard
from .cache import CacheStore

log = logging.getLogger(__name__)

DEFAULT_ALIAS = "https://conda.anaconda.org"
ANONYMOUS = None


def channel_url(channel: str, base_dir: Path | str | None = None) -> str:
    """Normalize a manifest channel entry to a base URL without trailing slash."""
    text = channel.strip()
    if "://" in text:
        return text.rstrip("/")
    looks_like_path = text.startswith((".", "/", "~")) or os.sep in text or (
        base_dir is not None and (Path(base_dir) / text).is_dir()
    )
    if looks_like_path:
        path = Path(text).expanduser()
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        return path.resolve().as_uri()
    alias = os.environ.get("PAKRAT_CHANNEL_ALIAS", DEFAULT_ALIAS).rstrip("/")
    return f"{alias}/{text.strip('/')}"


@dataclass(frozen=True)
class ChannelHandle:
    base_url: str
    subdir: str
    token: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))

    def url(self, *parts: str) -> str:
        return "/".join([self.base_url, self.subdir, *parts])


@dataclass
class FetchMetrics:
    requests: int = 0
    bytes_downloaded: int = 0
    cache_hits: int = 0
    by_kind: Counter = field(default_factory=Counter)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, kind: str, nbytes: int) -> None:
        with self._lock:
            self.requests += 1
            self.bytes_downloaded += nbytes
            self.by_kind[kind] += 1

    def hit(self) -> None:
        with self._lock:
            self.cache_hits += 1

    def as_dict(self) -> dict:
        return {
            "requests": self.requests,
            "bytes_downloaded": self.bytes_downloaded,
            "cache_hits": self.cache_hits,
            "by_kind": dict(sorted(self.by_kind.items())),
        }


class ChannelClient:
    """Fetches channel data; one instance per session so metrics accumulate.

    Tokens are scoped per channel base URL and acquired on first use.
    """

    def __init__(
        self,
        cache: CacheStore | None = None,
        metrics: FetchMetrics | None = None,
        timeout: float = 30.0,
        strict_size: bool = False,
    ):
        self.cache = cache or CacheStore()
        self.metrics = metrics or FetchMetrics()
        self.timeout = timeout
        self.strict_size = strict_size
        self._tokens: dict[str, str | None] = {}
        self._token_lock = threading.Lock()

    # -- raw GET -------------------------------------------------------------

    def _get(self, url: str, kind: str, token: str | None = None, gzip_ok: bool = False) -> bytes | None:
        """Body of ``url``; None on 404. One retry on transient failures."""
        parsed = urlparse(url)
        if parsed.scheme == "file":
            path = Path(url2pathname(parsed.path))
            try:
                data = path.read_bytes()
            except (FileNotFoundError, IsADirectoryError, NotADirectoryError):
                self.metrics.record(kind, 0)
                return None
            self.metrics.record(kind, len(data))
            return data
        if parsed.scheme not in ("http", "https"):
            raise TransportError(f"unsupported URL scheme in {url!r}")
        headers = {"User-Agent": "pakrat"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        if gzip_ok:
            headers["Accept-Encoding"] = "gzip"
        last: Exception | None = None
        for attempt in range(2):
            req = urllib.request.Request(url, headers=headers)
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    raw = resp.read()
                    encoding = resp.headers.get("Content-Encoding", "")
            except urllib.error.HTTPError as exc:
                exc.read()
                self.metrics.record(kind, 0)
                if exc.code == 404:
                    return None
                if exc.code in (401, 403):
                    raise AuthError(f"GET {url}: HTTP {exc.code} (token missing or rejected)", exc.code) from None
                last = TransportError(f"GET {url}: HTTP {exc.code}", exc.code)
                if exc.code < 500:
                    raise last from None
            except (urllib.error.URLError, ConnectionError, TimeoutError) as exc:
                self.metrics.record(kind, 0)
                last = TransportError(f"GET {url}: {getattr(exc, 'reason', exc)}")
            else:
                self.metrics.record(kind, len(raw))
                if encoding == "gzip":
                    try:
                        raw = gzip.decompress(raw)
                    except OSError as exc:
                        raise TransportError(f"GET {url}: bad gzip body: {exc}") from exc
                return raw
            if attempt == 0:
                log.debug("retrying %s after %s", url, last)
        assert last is not None
        raise last

    # -- tokens --------------------------------------------------------------

    def acquire_token(self, base_url: str) -> str | None:
        """Server-issued token from ``<base>/token``; None (anonymous) on 404."""
        data = self._get(f"{base_url.rstrip('/')}/token", "token")
        if data is None:
            return ANONYMOUS
        return data.decode("utf-8").strip()

    def token_for(self, base_url: str) -> str | None:
        base_url = base_url.rstrip("/")
        with self._token_lock:
            if base_url not in self._tokens:
                self._tokens[base_url] = self.acquire_token(base_url)
            return self._tokens[base_url]

    def handle(self, base_url: str, subdir: str) -> ChannelHandle:
        return ChannelHandle(base_url, subdir, self.token_for(base_url))

    # -- metadata ------------------------------------------------------------

    def fetch_index(self, channel: ChannelHandle) -> ShardIndex | None:
        """The subdir's shard index, or None when the subdir does not exist."""
        data = self._get(channel.url("repodata_shards.json"), "index", channel.token, gzip_ok=True)
        if data is None:
            return None
        index = ShardIndex.decode(data)
        if index.subdir != channel.subdir:
            raise RepodataError(f"index at {channel.url()} claims subdir {index.subdir!r}")
        return index

    def fetch_repodata(self, channel: ChannelHandle) -> MonolithicRepodata | None:
        data = self._get(channel.url("repodata.json"), "repodata", channel.token)
        if data is None:
            return None
        return MonolithicRepodata.decode(data, channel.base_url)

    def fetch_shard(self, channel: ChannelHandle, name: str, digest: str) -> Shard:
        cached = self.cache.read("shards", digest)
        if cached is not None:
            self.metrics.hit()
            return self._check_shard(verify_shard(cached, digest, channel.base_url), name)
        data = self._get(channel.url("shards", f"{digest}.json"), "shard", channel.token)
        if data is None:
            raise TransportError(f"shard for {name!r} ({digest}) missing from {channel.url()}", 404)
        # verify before caching: a mismatching download never reaches the cache
        shard = self._check_shard(verify_shard(data, digest, channel.base_url), name)
        self.cache.write("shards", digest, data)
        return shard

    @staticmethod
    def _check_shard(shard: Shard, name: str) -> Shard:
        if shard.name not in (None, name):
            raise IntegrityError(f"shard addressed as {name!r} holds records of {shard.name!r}")
        return shard

    # -- packages ------------------------------------------------------------

    def fetch_package(self, record: PackageRecord, url: str | None = None) -> Path:
        """Verified archive path in the cache for ``record``."""
        url = url or record.url
        if url is None:
            raise TransportError(f"no URL known for {record.filename}")
        cached = self.cache.verified_path("pkgs", record.sha256)
        if cached is not None:
            self.metrics.hit()
            return cached
        base = url.rsplit("/", 2)[0]
        data = self._get(url, "package", self.token_for(base))
        if data is None:
            raise TransportError(f"package {url} not found", 404)
        actual = sha256_hex(data)
        if actual != record.sha256:
            raise DigestMismatchError(f"package {record.filename}", record.sha256, actual)
        if record.size and len(data) != record.size:
            message = f"package {record.filename}: size {len(data)} differs from recorded {record.size}"
            if self.strict_size:
                raise IntegrityError(message)
            log.warning(message)
        return self.cache.write("pkgs", record.sha256, data)
