from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import pytest

from release_gate import load_dataset, spaceviewer_path


@pytest.fixture(scope="session")
def spaceviewer_csv() -> Path:
    return Path(str(spaceviewer_path()))


@pytest.fixture(scope="session")
def spaceviewer(spaceviewer_csv):
    return load_dataset(spaceviewer_csv)


class MockServer:
    """Tiny HTTP server. ``routes`` maps a path to a handler ``(query, body) -> (status, obj)``."""

    def __init__(self) -> None:
        self.routes: dict = {}
        self.requests: list[dict] = []
        server = self

        class Handler(BaseHTTPRequestHandler):
            def _serve(self, method: str) -> None:
                parsed = urlparse(self.path)
                query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                server.requests.append(
                    {
                        "method": method,
                        "path": parsed.path,
                        "query": query,
                        "headers": dict(self.headers),
                        "body": json.loads(body) if body else None,
                    }
                )
                handler = server.routes.get(parsed.path)
                if handler is None:
                    status, obj = 404, {"error": "not found"}
                else:
                    status, obj = handler(query, body)
                payload = obj if isinstance(obj, bytes) else json.dumps(obj).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def do_GET(self):
                self._serve("GET")

            def do_POST(self):
                self._serve("POST")

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def paged(self, path: str, pages: list[list]) -> None:
        def handler(query, body):
            page = int(query.get("page", 1))
            return 200, pages[page - 1] if page <= len(pages) else []

        self.routes[path] = handler

    def static(self, path: str, obj, status: int = 200) -> None:
        self.routes[path] = lambda query, body: (status, obj)

    def hits(self, path: str) -> list[dict]:
        return [r for r in self.requests if r["path"] == path]

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def mock_server():
    server = MockServer()
    yield server
    server.close()



_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, title, ok, detail)``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def report(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
