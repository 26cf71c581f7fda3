import json
import os
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from advscen import llmio
from advscen.llmio import ChatRequest, ClientConfig, MockClient, WireClient


def _request(content="hi"):
    return ChatRequest(
        model="default",
        messages=(
            {"role": "system", "content": "sys"},
            {"role": "user", "content": content},
        ),
    )


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=())
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=({"role": "user", "content": "x"},))
    with pytest.raises(ValueError):
        ChatRequest(
            model="m",
            messages=(
                {"role": "system", "content": "s"},
                {"role": "oracle", "content": "x"},
            ),
        )


def test_request_key_is_stable_and_content_sensitive():
    a = llmio.request_key(_request("one"))
    b = llmio.request_key(_request("one"))
    c = llmio.request_key(_request("two"))
    assert a == b
    assert a != c
    assert len(a) == 64 and all(ch in "0123456789abcdef" for ch in a)


class _StubHandler(BaseHTTPRequestHandler):
    script = []  # list of (status, body_dict or None)
    seen = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        type(self).seen.append({"body": body, "auth": self.headers.get("Authorization")})
        status, payload = type(self).script.pop(0)
        data = json.dumps(payload or {}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.script = []
    _StubHandler.seen = []
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()
    server.server_close()


def _ok_body(text):
    return {
        "choices": [{"message": {"content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 2},
    }


def _client(url, **kwargs):
    config = ClientConfig(endpoint_url=url, model="default", backoff_base=0.001, **kwargs)
    return WireClient(config, sleep=lambda s: None)


def test_wire_client_success(stub_server, monkeypatch):
    monkeypatch.setenv("ADVSCEN_API_KEY", "sekrit")
    _StubHandler.script = [(200, _ok_body("hello back"))]
    response = _client(stub_server).complete(_request())
    assert response.content == "hello back"
    assert response.prompt_tokens == 3
    assert _StubHandler.seen[0]["auth"] == "Bearer sekrit"
    assert _StubHandler.seen[0]["body"]["model"] == "default"


def test_wire_client_requires_api_key(stub_server, monkeypatch):
    monkeypatch.delenv("ADVSCEN_API_KEY", raising=False)
    with pytest.raises(llmio.ConfigurationError, match="ADVSCEN_API_KEY"):
        _client(stub_server).complete(_request())


def test_wire_client_retries_on_429_and_500(stub_server, monkeypatch):
    monkeypatch.setenv("ADVSCEN_API_KEY", "k")
    _StubHandler.script = [(429, None), (500, None), (200, _ok_body("third time"))]
    response = _client(stub_server).complete(_request())
    assert response.content == "third time"
    assert len(_StubHandler.seen) == 3


def test_wire_client_gives_up_after_retries(stub_server, monkeypatch):
    monkeypatch.setenv("ADVSCEN_API_KEY", "k")
    _StubHandler.script = [(503, None)] * 3
    with pytest.raises(llmio.RetriesExhausted):
        _client(stub_server, max_retries=2).complete(_request())


def test_wire_client_non_retryable_status(stub_server, monkeypatch):
    monkeypatch.setenv("ADVSCEN_API_KEY", "k")
    _StubHandler.script = [(400, None)]
    with pytest.raises(llmio.TransportError, match="400"):
        _client(stub_server).complete(_request())
    assert len(_StubHandler.seen) == 1


def test_wire_client_malformed_body(stub_server, monkeypatch):
    monkeypatch.setenv("ADVSCEN_API_KEY", "k")
    _StubHandler.script = [(200, {"choices": []})]
    with pytest.raises(llmio.ProtocolError):
        _client(stub_server).complete(_request())


def test_mock_client_playback(tmp_path):
    request = _request("scripted")
    key = llmio.save_fixture(str(tmp_path), request, "canned reply")
    client = MockClient(str(tmp_path))
    response = client.complete(request)
    assert response.content == "canned reply"
    assert client.calls == 1
    doc = json.loads((tmp_path / f"{key}.json").read_text())
    assert doc["request_digest"] == key


def test_mock_client_missing_fixture(tmp_path):
    client = MockClient(str(tmp_path))
    with pytest.raises(llmio.MissingFixture) as info:
        client.complete(_request("never recorded"))
    assert info.value.key == llmio.request_key(_request("never recorded"))


def test_mock_client_records_from_live(stub_server, monkeypatch, tmp_path):
    monkeypatch.setenv("ADVSCEN_API_KEY", "k")
    _StubHandler.script = [(200, _ok_body("recorded"))]
    client = MockClient(str(tmp_path), record_from=_client(stub_server))
    assert client.complete(_request()).content == "recorded"
    # second call replays the recorded fixture without the wire
    assert client.complete(_request()).content == "recorded"
    assert len(_StubHandler.seen) == 1
