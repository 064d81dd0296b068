"""Logprob wire protocol: HTTP client and a reference server.

The protocol is two JSON endpoints:

    GET  /v1/info     -> {"vocab_size": int, "max_context": int, "tokenizer_id": str}
    POST /v1/logprobs    {"tokens": [int, ...], "eval_start": int, "eval_end": int}
                      -> {"logprobs": [float, ...]}

where logprobs[i] = ln p(tokens[eval_start + i] | tokens[0 .. eval_start + i - 1])
and the array length must equal eval_end - eval_start.  eval_start must be
at least 1 (position 0 has no prediction target).  Any logprob backend can
sit behind this; :func:`serve_mock` exposes a fitted in-process model so the
remote path can be tested bit-for-bit against local scoring.

The client tolerates tiny positive logprobs (serialization jitter up to
1e-6) by clamping to 0; anything worse, a wrong-length array, or a
non-finite value is a protocol error, never silently patched.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests

from .ngram import LogProbSlice

__all__ = [
    "MockServerHandle",
    "ProtocolError",
    "RemoteLogProbModel",
    "TransportError",
    "serve_mock",
]

#: positive logprobs up to this are treated as float serialization jitter
POSITIVE_JITTER_TOL = 1e-6

DEFAULT_MAX_CONTEXT = 1 << 20


class TransportError(RuntimeError):
    """Could not reach the server (after retries)."""


class ProtocolError(RuntimeError):
    """The server answered, but the answer violates the protocol contract."""


class RemoteLogProbModel:
    """Client for the logprob wire protocol, usable as a scoring provider."""

    def __init__(self, endpoint: str, timeout: float = 30.0, retries: int = 2):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._session = requests.Session()
        self._info: dict | None = None

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = self.endpoint + path
        attempts = self.retries + 1
        last_exc: Exception | None = None
        for _ in range(attempts):
            try:
                if method == "GET":
                    resp = self._session.get(url, timeout=self.timeout)
                else:
                    resp = self._session.post(url, json=payload, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                continue
            if resp.status_code != 200:
                detail = ""
                try:
                    detail = resp.json().get("error", "")
                except ValueError:
                    pass
                raise ProtocolError(f"{url} returned HTTP {resp.status_code}: {detail}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned non-JSON body") from exc
        raise TransportError(f"{url} unreachable after {attempts} attempts: {last_exc}")

    def info(self) -> dict:
        if self._info is None:
            self._info = self._request("GET", "/v1/info")
        return self._info

    @property
    def vocab_size(self) -> int:
        return int(self.info()["vocab_size"])

    @property
    def tokenizer_id(self) -> str:
        return str(self.info()["tokenizer_id"])

    def logprob_slice(self, tokens, eval_start: int, eval_end: int, seq_id: str = "") -> LogProbSlice:
        arr = np.asarray(tokens)
        payload = {
            "tokens": arr.astype(int).tolist(),
            "eval_start": int(eval_start),
            "eval_end": int(eval_end),
        }
        body = self._request("POST", "/v1/logprobs", payload)
        values = body.get("logprobs")
        expected = eval_end - eval_start
        if not isinstance(values, list) or len(values) != expected:
            got = len(values) if isinstance(values, list) else type(values).__name__
            raise ProtocolError(f"logprobs length mismatch: expected {expected}, got {got}")
        out = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise ProtocolError("server returned a non-finite logprob")
        worst = float(out.max()) if out.size else 0.0
        if worst > POSITIVE_JITTER_TOL:
            raise ProtocolError(f"server returned logprob {worst} > jitter tolerance {POSITIVE_JITTER_TOL}")
        np.minimum(out, 0.0, out=out)
        return LogProbSlice(seq_id=seq_id, eval_start=eval_start, values=out)


# ---------------------------------------------------------------------------
# reference server
# ---------------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    model = None  # set on the subclass built in serve_mock
    max_context = DEFAULT_MAX_CONTEXT

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path != "/v1/info":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        self._send(
            200,
            {
                "vocab_size": self.model.vocab_size,
                "max_context": self.max_context,
                "tokenizer_id": self.model.tokenizer_id,
            },
        )

    def do_POST(self):
        if self.path != "/v1/logprobs":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length))
            tokens = payload["tokens"]
            eval_start = int(payload["eval_start"])
            eval_end = int(payload["eval_end"])
        except (ValueError, KeyError, TypeError) as exc:
            self._send(400, {"error": f"malformed request: {exc}"})
            return
        if not isinstance(tokens, list) or not all(isinstance(t, int) for t in tokens):
            self._send(400, {"error": "tokens must be a list of integers"})
            return
        if len(tokens) > self.max_context:
            self._send(400, {"error": f"request of {len(tokens)} tokens exceeds max_context {self.max_context}"})
            return
        if eval_start < 1:
            self._send(400, {"error": "eval_start must be >= 1: position 0 has no prediction target"})
            return
        if not (eval_start < eval_end <= len(tokens)):
            self._send(400, {"error": f"invalid eval range [{eval_start}, {eval_end}) for {len(tokens)} tokens"})
            return
        try:
            sl = self.model.logprob_slice(tokens, eval_start, eval_end)
        except ValueError as exc:
            self._send(400, {"error": str(exc)})
            return
        self._send(200, {"logprobs": sl.values.tolist()})


class MockServerHandle:
    """A running wire-protocol server; shut it down when done."""

    def __init__(self, server: ThreadingHTTPServer, thread: threading.Thread):
        self._server = server
        self._thread = thread
        host, port = server.server_address[:2]
        self.url = f"http://{host}:{port}"

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "MockServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve_mock(
    model,
    host: str = "127.0.0.1",
    port: int = 0,
    max_context: int = DEFAULT_MAX_CONTEXT,
    background: bool = True,
) -> MockServerHandle | None:
    """Serve ``model`` over the wire protocol; port 0 picks a free port.

    The handler is stateless between requests and the model is immutable,
    so concurrent identical requests get identical responses.  With
    ``background=False`` this blocks until interrupted and returns None.
    """
    handler = type("BoundHandler", (_Handler,), {"model": model, "max_context": max_context})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    if not background:
        try:
            server.serve_forever()
        finally:
            server.server_close()
        return None
    thread = threading.Thread(target=server.serve_forever, name="ctxgain-mock-server", daemon=True)
    thread.start()
    return MockServerHandle(server, thread)
