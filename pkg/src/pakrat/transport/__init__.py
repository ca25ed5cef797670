from .cache import CacheStore, default_cache_dir, sha256_file
from .client import ChannelClient, ChannelHandle, FetchMetrics, channel_url
from .provider import MONOLITHIC, SHARDED, ChannelProvider, subdirs_for
from .server import LoggedRequest, ServerHandle, serve

__all__ = [
    "CacheStore",
    "ChannelClient",
    "ChannelHandle",
    "ChannelProvider",
    "FetchMetrics",
    "LoggedRequest",
    "MONOLITHIC",
    "SHARDED",
    "ServerHandle",
    "channel_url",
    "default_cache_dir",
    "serve",
    "sha256_file",
    "subdirs_for",
]
