"""Shared fixtures: a scriptable local chat-completions endpoint."""
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class ChatEndpoint:
    """Tiny local server speaking the chat-completions wire shape.

    Behavior is scripted per test: `status_script` is a list of HTTP statuses
    to emit for successive requests (empty -> 200), `reply_fn` maps the
    request body to the assistant text, and `raw_body` overrides the response
    body entirely (for malformed-payload tests).
    """

    def __init__(self):
        self.status_script: list[int] = []
        self.reply_fn = lambda body: "OK"
        self.raw_body: str | None = None
        self.finish_reason = "stop"
        self.requests_seen: list[dict] = []
        self._lock = threading.Lock()

        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with endpoint._lock:
                    endpoint.requests_seen.append(body)
                    status = endpoint.status_script.pop(0) if endpoint.status_script else 200
                if status != 200:
                    self.send_response(status)
                    self.end_headers()
                    self.wfile.write(b"scripted failure")
                    return
                if endpoint.raw_body is not None:
                    payload = endpoint.raw_body.encode("utf-8")
                else:
                    reply = endpoint.reply_fn(body)
                    payload = json.dumps({
                        "choices": [{"message": {"role": "assistant", "content": reply},
                                     "finish_reason": endpoint.finish_reason}],
                    }).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):  # keep test output quiet
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    @property
    def request_count(self) -> int:
        with self._lock:
            return len(self.requests_seen)

    def shutdown(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def chat_endpoint():
    endpoint = ChatEndpoint()
    yield endpoint
    endpoint.shutdown()


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "test-key")
