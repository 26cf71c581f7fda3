"""Chat-completion clients: OpenAI-compatible wire client and fixture mock."""
from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import requests


class LlmError(Exception):
    pass


class ConfigurationError(LlmError):
    pass


class TransportError(LlmError):
    pass


class ProtocolError(LlmError):
    pass


class RetriesExhausted(TransportError):
    pass


class MissingFixture(LlmError):
    def __init__(self, key: str):
        super().__init__(f"no fixture recorded for request key {key}")
        self.key = key


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple  # ({"role": ..., "content": ...}, ...)
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(dict(m) for m in self.messages))
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if self.messages[0]["role"] != "system":
            raise ValueError("first message must have role 'system'")
        for m in self.messages:
            if m["role"] not in ("system", "user", "assistant"):
                raise ValueError(f"unknown role {m['role']!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ClientConfig:
    endpoint_url: str
    model: str
    api_key_env_name: str = "ADVSCEN_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    max_inflight: int = 4
    backoff_base: float = 1.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def request_key(request: ChatRequest) -> str:
    """Stable content hash of (model, messages) for fixture lookup."""
    canon = json.dumps(
        {
            "model": request.model,
            "messages": [
                {"role": m["role"], "content": m["content"]} for m in request.messages
            ],
        },
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class WireClient:
    """Blocking client for any OpenAI-compatible chat-completions endpoint."""

    def __init__(self, config: ClientConfig, sleep=time.sleep):
        self.config = config
        self._sleep = sleep
        self._gate = threading.Semaphore(config.max_inflight)
        self._rng = random.Random(0xC0FFEE)

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = os.environ.get(self.config.api_key_env_name)
        if not key:
            raise ConfigurationError(
                f"API key environment variable {self.config.api_key_env_name} is not set"
            )
        body = {
            "model": request.model,
            "messages": [
                {"role": m["role"], "content": m["content"]} for m in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        attempts = self.config.max_retries + 1
        last_error = None
        with self._gate:
            for attempt in range(attempts):
                if attempt:
                    delay = self.config.backoff_base * (2 ** (attempt - 1))
                    self._sleep(delay * (1.0 + 0.1 * self._rng.random()))
                try:
                    resp = requests.post(
                        self.config.endpoint_url,
                        json=body,
                        headers=headers,
                        timeout=self.config.timeout,
                    )
                except requests.RequestException as exc:
                    last_error = TransportError(str(exc))
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = TransportError(f"status {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise TransportError(f"non-retryable status {resp.status_code}")
                return self._parse(resp)
        raise RetriesExhausted(f"gave up after {attempts} attempts: {last_error}")

    @staticmethod
    def _parse(resp) -> ChatResponse:
        try:
            doc = resp.json()
            choice = doc["choices"][0]
            content = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
            usage = doc.get("usage", {})
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion body: {exc}") from exc
        if content is None:
            raise ProtocolError("completion content missing")
        return ChatResponse(
            content=content,
            finish_reason=finish,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


class MockClient:
    """Deterministic fixture-playback client; optionally records from a live one."""

    def __init__(self, fixtures_dir: str, record_from: Optional[WireClient] = None):
        self.fixtures_dir = fixtures_dir
        self.record_from = record_from
        self.calls = 0

    def _path(self, key: str) -> str:
        return os.path.join(self.fixtures_dir, f"{key}.json")

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        key = request_key(request)
        path = self._path(key)
        if not os.path.exists(path):
            if self.record_from is None:
                raise MissingFixture(key)
            response = self.record_from.complete(request)
            save_fixture(self.fixtures_dir, request, response.content)
            return response
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return ChatResponse(content=doc["content"])


def save_fixture(fixtures_dir: str, request: ChatRequest, content: str) -> str:
    """Write a playback fixture; returns the request key."""
    os.makedirs(fixtures_dir, exist_ok=True)
    key = request_key(request)
    path = os.path.join(fixtures_dir, f"{key}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"request_digest": key, "content": content}, fh, indent=1)
        fh.write("\n")
    return key
