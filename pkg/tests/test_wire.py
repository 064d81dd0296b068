import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
import requests

from ctxgain.corpus import ByteTokenizer, Document, tokenize
from ctxgain.ngram import fit_cache_ngram
from ctxgain.wire import ProtocolError, RemoteLogProbModel, TransportError, serve_mock

TOK = ByteTokenizer()


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(42)
    data = bytes(rng.integers(97, 117, size=3000).tolist())
    return fit_cache_ngram(
        [tokenize(Document("fit", data), TOK)],
        order=3, add_k=0.25, cache_lambda=0.3, cache_decay=0.999,
    )


@pytest.fixture(scope="module")
def server(model):
    handle = serve_mock(model)
    yield handle
    handle.shutdown()


class TestInfo:
    def test_info_reflects_model(self, server, model):
        client = RemoteLogProbModel(server.url)
        info = client.info()
        assert info["vocab_size"] == model.vocab_size
        assert info["tokenizer_id"] == model.tokenizer_id
        assert info["max_context"] >= 1

    def test_unknown_path_is_protocol_error(self, server):
        client = RemoteLogProbModel(server.url + "/nope")
        with pytest.raises(ProtocolError, match="404"):
            client.info()


class TestLogProbs:
    def test_round_trip_parity(self, server, model):
        client = RemoteLogProbModel(server.url)
        rng = np.random.default_rng(0)
        for _ in range(5):
            tokens = rng.integers(97, 117, size=200)
            local = model.logprob_slice(tokens, 3, 190)
            remote = client.logprob_slice(tokens, 3, 190)
            np.testing.assert_allclose(remote.values, local.values, atol=1e-9)

    def test_eval_start_zero_rejected(self, server):
        client = RemoteLogProbModel(server.url)
        with pytest.raises(ProtocolError, match="prediction target"):
            client.logprob_slice(np.array([97, 98, 99]), 0, 2)

    def test_bad_range_rejected(self, server):
        client = RemoteLogProbModel(server.url)
        with pytest.raises(ProtocolError):
            client.logprob_slice(np.array([97, 98]), 1, 5)

    def test_out_of_vocab_rejected(self, server):
        client = RemoteLogProbModel(server.url)
        with pytest.raises(ProtocolError, match="vocab"):
            client.logprob_slice(np.array([97, 300]), 1, 2)

    def test_concurrent_identical_requests_identical(self, server):
        client = RemoteLogProbModel(server.url)
        tokens = np.arange(97, 117)
        with ThreadPoolExecutor(max_workers=8) as pool:
            slices = list(pool.map(lambda _: client.logprob_slice(tokens, 1, 20).values, range(16)))
        for vals in slices[1:]:
            np.testing.assert_array_equal(vals, slices[0])


class _CannedHandler(BaseHTTPRequestHandler):
    """Returns a fixed /v1/logprobs body regardless of the request."""

    body: dict = {}

    def log_message(self, fmt, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        data = json.dumps(self.body).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture
def canned_server():
    servers = []

    def start(body):
        handler = type("H", (_CannedHandler,), {"body": body})
        srv = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        host, port = srv.server_address[:2]
        return f"http://{host}:{port}"

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()


class TestClientValidation:
    def test_wrong_length_is_protocol_error(self, canned_server):
        url = canned_server({"logprobs": [-0.5]})
        client = RemoteLogProbModel(url)
        with pytest.raises(ProtocolError, match="expected 3, got 1"):
            client.logprob_slice(np.array([1, 2, 3, 4]), 1, 4)

    def test_non_finite_is_protocol_error(self, canned_server):
        url = canned_server({"logprobs": [-0.5, float("nan")]})
        client = RemoteLogProbModel(url)
        with pytest.raises(ProtocolError, match="non-finite"):
            client.logprob_slice(np.array([1, 2, 3]), 1, 3)

    def test_small_positive_jitter_clamped(self, canned_server):
        url = canned_server({"logprobs": [5e-7, -0.25]})
        client = RemoteLogProbModel(url)
        sl = client.logprob_slice(np.array([1, 2, 3]), 1, 3)
        assert sl.values[0] == 0.0 and sl.values[1] == -0.25

    def test_large_positive_is_protocol_error(self, canned_server):
        url = canned_server({"logprobs": [0.5, -0.25]})
        client = RemoteLogProbModel(url)
        with pytest.raises(ProtocolError, match="jitter"):
            client.logprob_slice(np.array([1, 2, 3]), 1, 3)

    def test_missing_field_is_protocol_error(self, canned_server):
        url = canned_server({"something": []})
        client = RemoteLogProbModel(url)
        with pytest.raises(ProtocolError, match="length mismatch"):
            client.logprob_slice(np.array([1, 2]), 1, 2)


class TestTransport:
    def test_unreachable_endpoint_retries_then_fails(self):
        # grab a port that is certainly closed
        probe = ThreadingHTTPServer(("127.0.0.1", 0), BaseHTTPRequestHandler)
        host, port = probe.server_address[:2]
        probe.server_close()
        client = RemoteLogProbModel(f"http://{host}:{port}", timeout=0.2, retries=2)
        with pytest.raises(TransportError, match="after 3 attempts"):
            client.logprob_slice(np.array([1, 2]), 1, 2)
