"""Shared fixtures: golden documents, schemas, and a local scripted HTTP server."""

from __future__ import annotations

import json
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from chatner import AnnotatedDocument, Annotation, EntitySchema

DATA_DIR = Path(__file__).parent / "data"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance verdict lines after capture is released."""
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None) if module else None
    if verdicts:
        terminalreporter.section("acceptance verdicts")
        for line in verdicts:
            terminalreporter.write_line(line)


@pytest.fixture
def golden_schema() -> EntitySchema:
    return EntitySchema(
        {
            "person": "A person name, possibly with first and last names.",
            "organization": "An organization such as a company or agency.",
            "location": "A location such as a city or a country.",
        }
    )


@pytest.fixture
def golden_text() -> str:
    return "Fei-Fei Li is a female scientist born in China."


@pytest.fixture
def golden_doc(golden_text) -> AnnotatedDocument:
    return AnnotatedDocument(
        golden_text,
        {Annotation(0, 10, "person"), Annotation(41, 46, "location")},
    )


@pytest.fixture
def fewshot_examples() -> list[AnnotatedDocument]:
    return [
        AnnotatedDocument(
            "Elon Musk is the owner of the US company Tesla",
            {
                Annotation(30, 32, "location"),
                Annotation(0, 9, "person"),
                Annotation(41, 46, "organization"),
            },
        ),
        AnnotatedDocument(
            "Bill Gates is the owner of Microsoft",
            {
                Annotation(0, 10, "person"),
                Annotation(27, 36, "organization"),
            },
        ),
    ]


@pytest.fixture
def fewshot_text() -> str:
    return "Pedro Pereira is the president of Peru and the owner of Walmart."


class _ScriptedHandler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 (fixed by http.server)
        server = self.server
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        with server.lock:
            index = len(server.requests)
            server.requests.append(
                {
                    "path": self.path,
                    "authorization": self.headers.get("Authorization"),
                    "body": body,
                }
            )
            entry = server.script[min(index, len(server.script) - 1)]
        if entry[0] == "sleep":
            time.sleep(entry[1])
            entry = (200, {"choices": [{"message": {"content": ""}}]})
        status, payload = entry
        raw = payload if isinstance(payload, str) else json.dumps(payload)
        data = raw.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # keep test output clean
        pass


class ScriptedServer:
    """A local chat-completions endpoint driven by a per-test script.

    ``script`` is a list of (status, payload) entries consumed in request
    order (the last entry repeats); ``("sleep", seconds)`` delays before a
    plain 200. Received requests accumulate in ``requests``.
    """

    def __init__(self):
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
        self._httpd.script = [(200, {"choices": [{"message": {"content": "ok"}}]})]
        self._httpd.requests = []
        self._httpd.lock = threading.Lock()
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}/v1"

    @property
    def script(self) -> list:
        return self._httpd.script

    @script.setter
    def script(self, entries: list) -> None:
        self._httpd.script = list(entries)

    @property
    def requests(self) -> list:
        return self._httpd.requests

    def reply(self, content: str) -> tuple:
        return (200, {"choices": [{"message": {"content": content}}]})

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def http_server():
    server = ScriptedServer()
    yield server
    server.close()
