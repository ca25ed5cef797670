"""Read-only static channel server used by tests, the bench harness and ``pakrat serve``."""

from __future__ import annotations

import gzip
import logging
import threading
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import unquote, urlparse

from ..errors import TransportError

log = logging.getLogger(__name__)

GZIP_NAMES = ("repodata_shards.json",)


@dataclass(frozen=True)
class LoggedRequest:
    method: str
    path: str
    status: int
    nbytes: int


class _Handler(BaseHTTPRequestHandler):
    server: _ChannelHTTPServer
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: bytes = b"", headers: dict[str, str] | None = None) -> None:
        # logged before the body goes out so a client never outruns the log
        self.server.log_request_entry(LoggedRequest(self.command, self.path, status, len(body)))
        self.send_response(status)
        for key, value in (headers or {}).items():
            self.send_header(key, value)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def do_HEAD(self):
        self.do_GET()

    def do_GET(self):
        srv = self.server
        raw_path = urlparse(self.path).path
        parts = [unquote(p) for p in raw_path.split("/") if p]
        if any(p in ("..", ".") or "/" in p or "\\" in p for p in parts):
            return self._send(HTTPStatus.FORBIDDEN, b"forbidden\n")
        if parts == ["token"]:
            if srv.token is None:
                return self._send(HTTPStatus.NOT_FOUND, b"no token\n")
            return self._send(HTTPStatus.OK, srv.token.encode(), {"Content-Type": "text/plain"})
        if srv.token is not None:
            if self.headers.get("Authorization", "") != f"Bearer {srv.token}":
                return self._send(HTTPStatus.UNAUTHORIZED, b"unauthorized\n", {"WWW-Authenticate": "Bearer"})
        target = srv.root.joinpath(*parts) if parts else srv.root
        try:
            target.resolve().relative_to(srv.root)
        except ValueError:
            return self._send(HTTPStatus.FORBIDDEN, b"forbidden\n")
        if not target.is_file() or target.name == "token":
            return self._send(HTTPStatus.NOT_FOUND, b"not found\n")
        body = target.read_bytes()
        headers = {"Content-Type": "application/octet-stream"}
        if target.name in GZIP_NAMES and "gzip" in self.headers.get("Accept-Encoding", ""):
            body = gzip.compress(body, mtime=0)
            headers["Content-Encoding"] = "gzip"
        self._send(HTTPStatus.OK, body, headers)


class _ChannelHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, root: Path, token: str | None):
        super().__init__(addr, _Handler)
        self.root = root
        self.token = token
        self.request_log: list[LoggedRequest] = []
        self._log_lock = threading.Lock()

    def log_request_entry(self, entry: LoggedRequest) -> None:
        with self._log_lock:
            self.request_log.append(entry)


class ServerHandle:
    """A running server; use as a context manager or call :meth:`close`."""

    def __init__(self, httpd: _ChannelHTTPServer):
        self._httpd = httpd
        self._thread = threading.Thread(target=httpd.serve_forever, args=(0.05,), name="pakrat-serve", daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def request_log(self) -> list[LoggedRequest]:
        with self._httpd._log_lock:
            return list(self._httpd.request_log)

    def clear_log(self) -> None:
        with self._httpd._log_lock:
            self._httpd.request_log.clear()

    def gets(self, fragment: str = "") -> list[LoggedRequest]:
        return [r for r in self.request_log if r.method == "GET" and fragment in r.path]

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def wait(self) -> None:
        self._thread.join()

    def __enter__(self) -> ServerHandle:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve(root: Path | str, host: str = "127.0.0.1", port: int = 0, token: str | None = None) -> ServerHandle:
    """Serve ``root`` read-only. A ``token`` file in ``root`` enables bearer auth
    unless ``token`` is given explicitly."""
    root = Path(root).resolve()
    if not root.is_dir():
        raise TransportError(f"channel root {root} is not a directory")
    if token is None and (root / "token").is_file():
        token = (root / "token").read_text().strip()
    try:
        httpd = _ChannelHTTPServer((host, port), root, token)
    except OSError as exc:
        raise TransportError(f"cannot bind {host}:{port}: {exc}") from exc
    return ServerHandle(httpd)
