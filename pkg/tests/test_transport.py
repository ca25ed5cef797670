import gzip
import random
import urllib.request

import pytest

from pakrat.errors import AuthError, DigestMismatchError, TransportError
from pakrat.repodata import ShardIndex, sha256_hex
from pakrat.solver import solve
from pakrat.transport import (
    MONOLITHIC,
    CacheStore,
    ChannelClient,
    ChannelHandle,
    ChannelProvider,
    channel_url,
    serve,
)

from channel_kit import packaged, write_channel


@pytest.fixture
def channel_dir(tmp_path):
    entries = [
        packaged("a", "1.0", ["b"]),
        packaged("a", "1.1", ["b >=2"]),
        packaged("b", "2.0"),
        packaged("c", "1.0", subdir="noarch"),
    ]
    root = write_channel(tmp_path / "chan", entries)
    return root, {r.name + "-" + r.version.raw: (r, d) for r, d in entries}


@pytest.fixture
def server(channel_dir):
    with serve(channel_dir[0]) as srv:
        yield srv


@pytest.fixture
def client(tmp_path):
    return ChannelClient(CacheStore(tmp_path / "cache"))


def get(url, headers=None):
    req = urllib.request.Request(url, headers=headers or {})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, resp.read(), resp.headers
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read(), exc.headers


# -- server ------------------------------------------------------------------


def test_server_basic_statuses(server):
    assert get(server.url + "/linux-64/repodata_shards.json")[0] == 200
    assert get(server.url + "/linux-64/shards/" + "0" * 64 + ".json")[0] == 404
    assert get(server.url + "/../secret")[0] in (403, 404)
    assert get(server.url + "/linux-64/%2e%2e/%2e%2e/etc/passwd")[0] == 403


def test_server_path_traversal_raw_request(server):
    import http.client
    from urllib.parse import urlparse

    u = urlparse(server.url)
    conn = http.client.HTTPConnection(u.hostname, u.port)
    conn.request("GET", "/../secret")
    assert conn.getresponse().status == 403
    conn.close()


def test_server_token_enforced(channel_dir):
    with serve(channel_dir[0], token="secret1") as srv:
        status, body, _ = get(srv.url + "/token")
        assert (status, body) == (200, b"secret1")
        assert get(srv.url + "/linux-64/repodata_shards.json")[0] == 401
        ok = get(srv.url + "/linux-64/repodata_shards.json", {"Authorization": "Bearer secret1"})
        assert ok[0] == 200


def test_server_gzip_only_for_index(server):
    status, body, headers = get(server.url + "/linux-64/repodata_shards.json", {"Accept-Encoding": "gzip"})
    assert headers.get("Content-Encoding") == "gzip"
    plain = get(server.url + "/linux-64/repodata_shards.json")[1]
    assert gzip.decompress(body) == plain
    _, _, headers = get(server.url + "/linux-64/repodata.json", {"Accept-Encoding": "gzip"})
    assert headers.get("Content-Encoding") is None


# -- token handshake ---------------------------------------------------------


def test_acquire_token_roundtrip(channel_dir, client):
    (channel_dir[0] / "token").write_text("secret1\n")
    with serve(channel_dir[0]) as srv:
        assert client.acquire_token(srv.url) == "secret1"
        index = client.fetch_index(client.handle(srv.url, "linux-64"))
        assert sorted(index.shards) == ["a", "b"]


def test_anonymous_token(server, client):
    assert client.acquire_token(server.url) is None


def test_token_500_is_transport_error(tmp_path, client, monkeypatch):
    import http.server
    import threading

    class H(http.server.BaseHTTPRequestHandler):
        def do_GET(self):
            self.send_response(500)
            self.send_header("Content-Length", "0")
            self.end_headers()

        def log_message(self, *a):
            pass

    httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0), H)
    threading.Thread(target=httpd.serve_forever, daemon=True).start()
    try:
        with pytest.raises(TransportError) as info:
            client.acquire_token(f"http://127.0.0.1:{httpd.server_address[1]}")
        assert info.value.status == 500
        # one retry on a transient failure
        assert client.metrics.requests == 2
    finally:
        httpd.shutdown()
        httpd.server_close()


def test_wrong_token_is_auth_error(channel_dir, client):
    with serve(channel_dir[0], token="right") as srv:
        with pytest.raises(AuthError):
            client.fetch_index(ChannelHandle(srv.url, "linux-64", "wrong"))
        assert AuthError("x").exit_code == 1


# -- index and shards --------------------------------------------------------


def test_fetch_index_gzip_identical(server, client, channel_dir):
    index = client.fetch_index(client.handle(server.url, "linux-64"))
    on_disk = ShardIndex.decode((channel_dir[0] / "linux-64" / "repodata_shards.json").read_bytes())
    assert index == on_disk
    assert any(r.path.endswith("repodata_shards.json") and r.status == 200 for r in server.request_log)
    # the compressed transfer is what was counted
    assert client.metrics.bytes_downloaded < len(on_disk.encode()) + 1


def test_missing_subdir_index_is_none(server, client):
    assert client.fetch_index(client.handle(server.url, "win-64")) is None


def test_cold_then_warm_shard_fetch(server, client):
    handle = client.handle(server.url, "linux-64")
    index = client.fetch_index(handle)
    before = client.metrics.requests
    shard = client.fetch_shard(handle, "a", index.shards["a"])
    assert shard.name == "a" and len(shard.packages) == 2
    assert client.metrics.requests == before + 1
    again = client.fetch_shard(handle, "a", index.shards["a"])
    assert again == shard
    assert client.metrics.requests == before + 1
    assert client.metrics.cache_hits == 1
    assert all(r.channel == server.url for r in shard.packages.values())


def test_tampered_shard_not_cached(channel_dir, client):
    root = channel_dir[0]
    index = ShardIndex.decode((root / "linux-64" / "repodata_shards.json").read_bytes())
    path = root / "linux-64" / "shards" / f"{index.shards['b']}.json"
    data = bytearray(path.read_bytes())
    data[5] ^= 0x01
    path.write_bytes(bytes(data))
    with serve(root) as srv:
        with pytest.raises(DigestMismatchError) as info:
            client.fetch_shard(client.handle(srv.url, "linux-64"), "b", index.shards["b"])
    assert info.value.exit_code == 3
    assert not client.cache.contains("shards", index.shards["b"])


def test_corrupt_cache_entry_detected(server, client):
    handle = client.handle(server.url, "linux-64")
    index = client.fetch_index(handle)
    client.fetch_shard(handle, "a", index.shards["a"])
    entry = client.cache.path("shards", index.shards["a"])
    entry.write_bytes(entry.read_bytes() + b" ")
    assert client.cache.fsck() == [entry]
    with pytest.raises(DigestMismatchError):
        client.fetch_shard(handle, "a", index.shards["a"])


def test_file_scheme_matches_http(channel_dir, server, tmp_path):
    results = []
    for base in (server.url, channel_url(str(channel_dir[0]))):
        client = ChannelClient(CacheStore(tmp_path / f"c{len(results)}"))
        handle = client.handle(base, "linux-64")
        index = client.fetch_index(handle)
        shard = client.fetch_shard(handle, "a", index.shards["a"])
        results.append((index, sorted(shard.packages)))
    assert results[0] == results[1]


# -- packages ----------------------------------------------------------------


def test_fetch_package_and_reuse(server, client, channel_dir):
    record, data = channel_dir[1]["b-2.0"]
    record = record.with_channel(server.url)
    path = client.fetch_package(record)
    assert path.read_bytes() == data
    n = len(server.gets(record.filename))
    client.fetch_package(record)
    assert len(server.gets(record.filename)) == n == 1


def test_truncated_package_is_digest_error(channel_dir, client):
    record, data = channel_dir[1]["b-2.0"]
    (channel_dir[0] / "linux-64" / record.filename).write_bytes(data[:-3])
    with serve(channel_dir[0]) as srv:
        with pytest.raises(DigestMismatchError):
            client.fetch_package(record.with_channel(srv.url))
    assert not client.cache.contains("pkgs", record.sha256)


def test_size_mismatch_strictness(channel_dir, tmp_path):
    import dataclasses

    record, _ = channel_dir[1]["b-2.0"]
    bad = dataclasses.replace(record, size=record.size + 1).with_channel(channel_url(str(channel_dir[0])))
    lax = ChannelClient(CacheStore(tmp_path / "lax"))
    assert lax.fetch_package(bad).is_file()
    strict = ChannelClient(CacheStore(tmp_path / "strict"), strict_size=True)
    with pytest.raises(Exception) as info:
        strict.fetch_package(bad)
    assert info.value.exit_code == 3


# -- channel provider --------------------------------------------------------


def test_provider_lazy_and_noarch(server, client):
    provider = ChannelProvider([server.url], "linux-64", client)
    assert [r.version.raw for r in provider.candidates_for("a")] == ["1.1", "1.0"]
    assert [r.subdir for r in provider.candidates_for("c")] == ["noarch"]
    assert provider.candidates_for("zzz") == []
    shard_gets = server.gets("/shards/")
    assert len(shard_gets) == 2


def test_provider_strict_channel_priority(tmp_path, client):
    first = write_channel(tmp_path / "one", [packaged("a", "1.0")])
    second = write_channel(tmp_path / "two", [packaged("a", "9.0"), packaged("b", "1.0")])
    provider = ChannelProvider([channel_url(str(first)), channel_url(str(second))], "linux-64", client)
    assert [r.version.raw for r in provider.candidates_for("a")] == ["1.0"]
    assert provider.candidates_for("b")[0].channel == channel_url(str(second))


def test_sharded_and_monolithic_solve_agree(server, tmp_path):
    picks = []
    for mode in ("sharded", MONOLITHIC):
        provider = ChannelProvider([server.url], "linux-64", ChannelClient(CacheStore(tmp_path / mode)), mode=mode)
        sol = solve(["a"], provider)
        picks.append(sorted(r.url for r in sol.selected.values()))
    assert picks[0] == picks[1]
    assert picks[0][0].endswith("a-1.1-h0_0.pakrat.tar.gz")


def test_parallel_prefetch_same_cache_contents(tmp_path):
    rng = random.Random(3)
    entries = [packaged(f"n{i}", f"{rng.randint(1, 9)}.0") for i in range(30)]
    root = write_channel(tmp_path / "chan", entries)
    base = channel_url(str(root))
    caches = []
    for parallel in (1, 8):
        store = CacheStore(tmp_path / f"cache{parallel}")
        provider = ChannelProvider([base], "linux-64", ChannelClient(store), parallel=parallel)
        provider.prefetch([f"n{i}" for i in range(30)])
        caches.append(sorted((p.name, p.read_bytes()) for p in store.entries()))
    assert caches[0] == caches[1] and len(caches[0]) == 30


def test_channel_url_forms(tmp_path, monkeypatch):
    monkeypatch.setenv("PAKRAT_CHANNEL_ALIAS", "http://mirror.test/")
    assert channel_url("conda-forge") == "http://mirror.test/conda-forge"
    assert channel_url("https://prefix.dev/conda-forge/") == "https://prefix.dev/conda-forge"
    assert channel_url(str(tmp_path)) == tmp_path.resolve().as_uri()
    (tmp_path / "local").mkdir()
    assert channel_url("local", base_dir=tmp_path) == (tmp_path / "local").resolve().as_uri()


def test_cache_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("PAKRAT_CACHE_DIR", str(tmp_path / "x"))
    assert CacheStore().root == tmp_path / "x"


def test_cache_write_rejects_wrong_digest(tmp_path):
    store = CacheStore(tmp_path)
    with pytest.raises(DigestMismatchError):
        store.write("shards", sha256_hex(b"a"), b"b")
