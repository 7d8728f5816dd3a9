import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from toporag.cli import main as cli_main
from toporag.config import mini_config_path
from toporag.graph import TextAttributedGraph, canonical_edges


def make_graph(n, edges, texts=None, **kw):
    texts = texts or tuple(f"node {i} text body" for i in range(n))
    return TextAttributedGraph(tuple(texts), canonical_edges(edges, n) if len(edges) else np.zeros((0, 2), np.int64), **kw)


def random_graph(rng, n, p):
    u = np.triu(rng.random((n, n)) < p, 1)
    return make_graph(n, np.argwhere(u))


def path_graph(n):
    return make_graph(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(leaves):
    return make_graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def cycle_graph(n):
    return make_graph(n, [(i, (i + 1) % n) for i in range(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class _Recorder:
    """Loopback JSON server: ``handler(path, body) -> (status, payload)``."""

    def __init__(self, handler):
        self.handler = handler
        self.requests = []
        self.headers = []
        recorder = self

        class H(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                recorder.requests.append((self.path, body))
                recorder.headers.append(dict(self.headers))
                status, payload = recorder.handler(self.path, body)
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), H)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def loopback():
    servers = []

    def start(handler):
        srv = _Recorder(handler)
        servers.append(srv)
        return srv

    yield start
    for srv in servers:
        srv.close()


MINI_PIPELINE = (
    ["ingest"],
    ["embed", "topo-proximity"],
    ["embed", "topo-role"],
    ["embed", "text"],
    ["correlate", "--kind", "proximity"],
    ["correlate", "--kind", "role"],
    ["index", "--kind", "proximity"],
    ["index", "--kind", "text"],
    ["generate", "--strategy", "none"],
    ["generate", "--strategy", "random"],
    ["generate", "--strategy", "text"],
    ["generate", "--strategy", "topo"],
    ["evaluate"],
    ["impute"],
)


def run_mini_pipeline(out, config=None, steps=MINI_PIPELINE):
    """Run the bundled mini pipeline into ``out``; returns the list of exit codes."""
    config = config or mini_config_path()
    return [cli_main([*step, "--config", str(config), "--out", str(out)]) for step in steps]


def tree_digest(root):
    """Relative path -> bytes for every file under ``root``."""
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
