"""In-process chat-completions stub for harness tests and offline demos.

Serves the minimal OpenAI-style wire format: POST with {model, messages, ...}
returns {choices: [{message: {content}}], usage: {completion_tokens}}. Replies
are picked by the first rule whose substring appears in the prompt; the server
can also be told to fail the first k requests or to omit the usage block, to
exercise retry and token-estimation fallbacks.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Sequence


@dataclass(frozen=True)
class StubRule:
    """Reply with `completion` / `tokens` when `needle` occurs in the prompt."""

    needle: str
    completion: str
    tokens: int


class StubServer:
    """Threaded stub endpoint bound to an ephemeral localhost port."""

    def __init__(
        self,
        rules: Sequence[StubRule] = (),
        default_completion: str = "Answer1: \\boxed{0}",
        default_tokens: int = 1,
        fail_first: int = 0,
        omit_usage: bool = False,
    ):
        self.rules = tuple(rules)
        self.default_completion = default_completion
        self.default_tokens = default_tokens
        self.fail_first = fail_first
        self.omit_usage = omit_usage
        self.request_count = 0
        self._lock = threading.Lock()
        self._server: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        if self._server is None:
            raise RuntimeError("server not started")
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def _reply_for(self, prompt: str) -> tuple[str, int]:
        for rule in self.rules:
            if rule.needle in prompt:
                return rule.completion, rule.tokens
        return self.default_completion, self.default_tokens

    def start(self) -> "StubServer":
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                with stub._lock:
                    stub.request_count += 1
                    should_fail = stub.request_count <= stub.fail_first
                if should_fail:
                    self.send_response(500)
                    self.end_headers()
                    self.wfile.write(b"transient failure")
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    request = json.loads(self.rfile.read(length))
                    prompt = request["messages"][0]["content"]
                except (ValueError, KeyError, IndexError, TypeError):
                    self.send_response(400)
                    self.end_headers()
                    return
                completion, tokens = stub._reply_for(prompt)
                body = {"choices": [{"message": {"content": completion}}]}
                if not stub.omit_usage:
                    body["usage"] = {"completion_tokens": tokens}
                payload = json.dumps(body).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass  # keep tests quiet

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
