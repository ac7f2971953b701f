"""Chat-completion and embedding providers: HTTP clients and offline mocks."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.7
DEFAULT_RETRIES = 3
DEFAULT_INFLIGHT = 4
MOCK_EMBED_DIM = 256


class ProviderError(RuntimeError):
    pass


class TransportError(ProviderError):
    """Network or HTTP failure; safe to retry."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class GenerationFailure(ProviderError):
    """No parseable JSON after the configured number of attempts."""

    def __init__(self, message: str, responses: list):
        super().__init__(message)
        self.responses = responses


class EmbeddingError(ProviderError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: tuple
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 2048
    # Opaque call identity (iteration/parent/stage/attempt); ignored by HTTP
    # providers, used by mocks so repeated prompts can still differ.
    tag: str = ""

    @property
    def user_text(self) -> str:
        return "\n\n".join(self.user)

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.system, self.user_text, repr(self.temperature), self.tag):
            h.update(part.encode("utf-8"))
            h.update(b"\0")
        return h.hexdigest()


@dataclass
class ChatResponse:
    text: str
    data: Optional[Any] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


_FENCE_RE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.DOTALL)


def strip_fences(text: str) -> str:
    m = _FENCE_RE.match(text)
    return (m.group(1) if m else text).strip()


def parse_json_response(text: str) -> ChatResponse:
    body = strip_fences(text)
    try:
        return ChatResponse(text, json.loads(body))
    except json.JSONDecodeError as exc:
        return ChatResponse(text, None, f"invalid JSON: {exc}")


class RunLog:
    """Append-only JSON-lines log; thread-safe."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.records: list = []

    def write(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False, default=str) + "\n")


class ChatProvider:
    """Base class: subclasses implement ``_complete(request) -> str``."""

    def __init__(self, run_log: Optional[RunLog] = None, max_inflight: int = DEFAULT_INFLIGHT):
        self.run_log = run_log or RunLog()
        self._sem = threading.BoundedSemaphore(max_inflight)

    def _complete(self, request: ChatRequest) -> str:
        raise NotImplementedError

    def chat(self, request: ChatRequest) -> ChatResponse:
        start = time.perf_counter()
        with self._sem:
            try:
                text = self._complete(request)
            except TransportError as exc:
                self.run_log.write({"kind": "chat", "request": request.digest(), "tag": request.tag,
                                    "error": str(exc), "latency": time.perf_counter() - start})
                raise
        resp = parse_json_response(text)
        self.run_log.write({"kind": "chat", "request": request.digest(), "tag": request.tag,
                            "response": text, "json_ok": resp.ok,
                            "latency": time.perf_counter() - start})
        return resp


def chat_json(provider: ChatProvider, request: ChatRequest, retries: int = DEFAULT_RETRIES,
              transport_retries: int = 3, backoff: float = 1.0,
              sleep: Callable[[float], None] = time.sleep) -> ChatResponse:
    """Ask until the reply parses as JSON.

    Malformed replies are re-asked with the same prompt up to ``retries``
    attempts in total; transport errors back off exponentially and are
    re-raised after ``transport_retries`` attempts.
    """
    seen = []
    for attempt in range(retries):
        req = ChatRequest(request.system, request.user, request.temperature,
                          request.max_tokens, f"{request.tag}#{attempt}")
        for t_attempt in range(transport_retries):
            try:
                resp = provider.chat(req)
                break
            except TransportError as exc:
                if t_attempt + 1 == transport_retries:
                    raise TransportError(str(exc), attempts=t_attempt + 1) from exc
                sleep(backoff * 2 ** t_attempt)
        if resp.ok:
            return resp
        seen.append(resp.text)
    raise GenerationFailure(f"no valid JSON after {retries} attempts", seen)


class HttpChatProvider(ChatProvider):
    """OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(self, endpoint: str, api_key: str, model: str, timeout: float = 60.0, **kw):
        super().__init__(**kw)
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def _complete(self, request: ChatRequest) -> str:
        import httpx

        messages = [{"role": "system", "content": request.system}]
        messages += [{"role": "user", "content": u} for u in request.user]
        payload = {"model": self.model, "messages": messages,
                   "temperature": request.temperature, "max_tokens": request.max_tokens}
        try:
            r = httpx.post(f"{self.endpoint}/chat/completions", json=payload, timeout=self.timeout,
                           headers={"Authorization": f"Bearer {self.api_key}"})
            r.raise_for_status()
            return r.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"chat request failed: {exc}") from exc


class FixtureChatProvider(ChatProvider):
    """Replays fixture texts: a list (consumed in order) or a callable."""

    def __init__(self, fixtures, **kw):
        super().__init__(**kw)
        self._fixtures = fixtures if callable(fixtures) else list(fixtures)
        self._i = 0
        self.requests: list = []

    def _complete(self, request: ChatRequest) -> str:
        self.requests.append(request)
        if callable(self._fixtures):
            out = self._fixtures(request)
        else:
            if self._i >= len(self._fixtures):
                raise TransportError("fixture table exhausted")
            out = self._fixtures[self._i]
            self._i += 1
        if isinstance(out, Exception):
            raise out
        return out


# ---------------------------------------------------------------- embeddings

class EmbeddingProvider:
    def __init__(self, run_log: Optional[RunLog] = None, max_inflight: int = DEFAULT_INFLIGHT):
        self.run_log = run_log or RunLog()
        self._sem = threading.BoundedSemaphore(max_inflight)

    def _embed(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        start = time.perf_counter()
        with self._sem:
            v = np.asarray(self._embed(text), dtype=float)
        norm = float(np.linalg.norm(v))
        if not norm > 0:
            raise EmbeddingError("provider returned a zero vector")
        self.run_log.write({"kind": "embed", "request": hashlib.sha256(text.encode()).hexdigest(),
                            "dim": len(v), "latency": time.perf_counter() - start})
        return v / norm


_WORD_RE = re.compile(r"[A-Za-z0-9_$]+")


class HashingEmbedder(EmbeddingProvider):
    """Seeded feature-hashing bag of lower-cased tokens."""

    def __init__(self, dim: int = MOCK_EMBED_DIM, seed: int = 0, **kw):
        super().__init__(**kw)
        self.dim = dim
        self.seed = seed

    def bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=str(self.seed).encode())
        return int.from_bytes(h.digest(), "little") % self.dim

    def _embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        toks = _WORD_RE.findall(text.lower()) or [text]
        for tok in toks:
            v[self.bucket(tok)] += 1.0
        return v


class HttpEmbeddingProvider(EmbeddingProvider):
    """OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, endpoint: str, api_key: str, model: str, timeout: float = 60.0, **kw):
        super().__init__(**kw)
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def _embed(self, text: str) -> np.ndarray:
        import httpx

        try:
            r = httpx.post(f"{self.endpoint}/embeddings", json={"model": self.model, "input": text},
                           timeout=self.timeout, headers={"Authorization": f"Bearer {self.api_key}"})
            r.raise_for_status()
            return np.asarray(r.json()["data"][0]["embedding"], dtype=float)
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc


@dataclass
class ProviderSettings:
    kind: str = "mock"  # "mock" | "http"
    endpoint: str = ""
    api_key: str = field(default="", repr=False)
    chat_model: str = ""
    embedding_model: str = ""
    timeout: float = 60.0
    max_inflight: int = DEFAULT_INFLIGHT
    temperature: float = DEFAULT_TEMPERATURE
    retries: int = DEFAULT_RETRIES
    seed: int = 0
    # expressions the offline mock may propose verbatim
    mock_neighborhood: list = field(default_factory=list)

    @classmethod
    def from_env(cls, base: Optional["ProviderSettings"] = None) -> "ProviderSettings":
        """Apply the ``DAGALPHA_API_KEY`` credential from the environment."""
        s = base or cls()
        if os.environ.get("DAGALPHA_API_KEY"):
            s.api_key = os.environ["DAGALPHA_API_KEY"]
        return s
