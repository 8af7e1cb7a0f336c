"""Chat endpoint client with retries, plus in-process mock endpoints.

Wire contract (provider neutral)::

    POST <base_url>
    {"model": ..., "temperature": ...,
     "messages": [{"role": "system" | "user",
                   "content": [{"type": "text", "text": ...} |
                               {"type": "image", "data": <base64 PNG or URL>}]}]}

The reply is a JSON object whose ``text`` field holds the model output. An
OpenAI-style ``choices[0].message.content`` reply is also accepted.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Iterable, Protocol, Sequence, TypeVar

import httpx

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

Message = dict[str, Any]


class EndpointError(RuntimeError):
    """Transport or HTTP failure that survived the retry budget."""

    def __init__(self, msg: str, status: int | None = None):
        super().__init__(msg)
        self.status = status


class MalformedReply(ValueError):
    """The endpoint answered, but the answer lacks what the caller needs."""


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model_name: str = ""
    api_key_env: str = ""
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def text_part(text: str) -> dict[str, str]:
    return {"type": "text", "text": text}


def image_part(png: bytes | str) -> dict[str, str]:
    data = png if isinstance(png, str) else base64.b64encode(png).decode("ascii")
    return {"type": "image", "data": data}


def message(role: str, *parts: dict[str, str]) -> Message:
    return {"role": role, "content": list(parts)}


def message_text(messages: Sequence[Message]) -> str:
    """All text parts joined, for mocks that route on prompt content."""
    return "\n".join(
        p["text"] for m in messages for p in m["content"] if p.get("type") == "text"
    )


class Endpoint(Protocol):
    config: LlmEndpointConfig

    def complete(self, messages: Sequence[Message], temperature: float | None = None) -> str: ...


def backoff_delays(max_retries: int, rng: random.Random, base: float = 1.0, factor: float = 2.0,
                   jitter: float = 0.2) -> list[float]:
    return [base * factor**i * (1 + rng.uniform(-jitter, jitter)) for i in range(max_retries)]


def _retryable(status: int) -> bool:
    return status == 429 or status >= 500


class HttpEndpoint:
    def __init__(self, config: LlmEndpointConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep, rng: random.Random | None = None):
        self.config = config
        self._client = httpx.Client(transport=transport, timeout=config.timeout)
        self._sleep = sleep
        self._rng = rng or random.Random()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if not key:
                raise EndpointError(f"credential variable {self.config.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: Sequence[Message], temperature: float | None = None) -> str:
        body = {
            "model": self.config.model_name,
            "messages": list(messages),
            "temperature": self.config.temperature if temperature is None else temperature,
        }
        headers = self._headers()
        delays = backoff_delays(self.config.max_retries, self._rng)
        last: EndpointError | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(delays[attempt - 1])
            try:
                resp = self._client.post(self.config.base_url, json=body, headers=headers)
            except httpx.HTTPError as e:
                last = EndpointError(f"transport error: {type(e).__name__}: {e}")
                log.warning("endpoint attempt %d failed: %s", attempt + 1, last)
                continue
            if resp.status_code >= 400:
                last = EndpointError(f"HTTP {resp.status_code}", status=resp.status_code)
                if not _retryable(resp.status_code):
                    raise last
                log.warning("endpoint attempt %d failed: %s", attempt + 1, last)
                continue
            return extract_reply_text(resp.content)
        assert last is not None
        raise last

    def close(self) -> None:
        self._client.close()


def extract_reply_text(content: bytes | str) -> str:
    try:
        data = json.loads(content)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise EndpointError(f"reply is not JSON: {e}") from None
    if isinstance(data, dict):
        if isinstance(data.get("text"), str):
            return data["text"]
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            pass
    raise EndpointError("reply JSON has no text field")


class MockEndpoint:
    """Endpoint backed by a Python callable; used by tests and ``mock://`` profiles."""

    def __init__(self, responder: Callable[[Sequence[Message]], str],
                 config: LlmEndpointConfig | None = None):
        self.responder = responder
        self.config = config or LlmEndpointConfig(base_url="mock://inline")
        self.calls: list[Sequence[Message]] = []
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[Message], temperature: float | None = None) -> str:
        with self._lock:
            self.calls.append(messages)
        return self.responder(messages)


class ScriptedEndpoint(MockEndpoint):
    """Returns canned replies in order; an Exception instance in the script is raised."""

    def __init__(self, replies: Iterable[str | Exception], config: LlmEndpointConfig | None = None):
        self._replies = list(replies)
        self._i = 0
        super().__init__(self._next, config)

    def _next(self, messages):
        if self._i >= len(self._replies):
            raise EndpointError("script exhausted")
        r = self._replies[self._i]
        self._i += 1
        if isinstance(r, Exception):
            raise r
        return r


def make_endpoint(config: LlmEndpointConfig) -> Endpoint:
    if config.base_url.startswith("mock://"):
        from groundkit import mocks

        return MockEndpoint(mocks.responder(config.base_url[len("mock://"):]), config)
    return HttpEndpoint(config)


def map_bounded(fn: Callable[[T], R], items: Sequence[T], max_in_flight: int) -> list[R]:
    """Apply ``fn`` with at most ``max_in_flight`` concurrent calls; results keep input order."""
    if max_in_flight <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(fn, items))
