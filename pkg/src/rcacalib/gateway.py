"""Chat-completion backends with a shared content-addressed response cache.

Two backends implement the same ``complete`` contract: :class:`HttpChatBackend`
talks to an OpenAI-style ``/chat/completions`` endpoint, and
:class:`SimulatedBackend` answers from a seeded response script so the whole
pipeline can run offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import httpx
import numpy as np

from .errors import BackendError, ConfigurationError, TransportError, ValidationError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
UNMATCHED = "UNMATCHED"


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple
    temperature: float = 1.0
    max_tokens: int = 256
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        msgs = tuple((str(r), str(c)) for r, c in self.messages)
        if not msgs:
            raise ValidationError("a completion request needs at least one message")
        for role, _ in msgs:
            if role not in ROLES:
                raise ValidationError(f"unknown message role {role!r}")
        if self.n_samples < 1:
            raise ValidationError("n_samples must be at least 1")
        if self.temperature < 0:
            raise ValidationError("temperature must be non-negative")
        object.__setattr__(self, "messages", msgs)

    def payload(self) -> dict:
        return {"messages": [list(m) for m in self.messages],
                "temperature": self.temperature, "max_tokens": self.max_tokens,
                "n_samples": self.n_samples, "seed": self.seed}

    @property
    def prompt_text(self) -> str:
        return "\n".join(c for _, c in self.messages)


@dataclass(frozen=True)
class CompletionBatch:
    completions: tuple
    backend_id: str
    cached: bool = False


def request_key(backend_id: str, request: CompletionRequest) -> str:
    blob = json.dumps({"backend": backend_id, "request": request.payload()},
                      sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Thread-safe completion cache, optionally persisted as JSON-Lines."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._mem: dict = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._mem[rec["key"]] = tuple(rec["completions"])

    def get(self, key):
        with self._lock:
            return self._mem.get(key)

    def put(self, key, completions):
        with self._lock:
            if key in self._mem:
                return
            self._mem[key] = tuple(completions)
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "completions": list(completions)},
                                        ensure_ascii=False) + "\n")

    def __len__(self):
        return len(self._mem)


class Backend:
    """Base class: caching, call accounting and the batch-size contract."""

    backend_id = "abstract"

    def __init__(self, cache: Optional[ResponseCache] = None):
        self.cache = cache
        self._count_lock = threading.Lock()
        self.calls = 0

    def _generate(self, request: CompletionRequest) -> list:
        raise NotImplementedError

    def complete(self, request: CompletionRequest) -> CompletionBatch:
        key = request_key(self.backend_id, request) if self.cache is not None else None
        if key is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return CompletionBatch(hit, self.backend_id, cached=True)
        with self._count_lock:
            self.calls += 1
        out = list(self._generate(request))
        if len(out) != request.n_samples:
            raise BackendError(200, f"expected {request.n_samples} completions, got {len(out)}")
        if key is not None:
            self.cache.put(key, out)
        return CompletionBatch(tuple(out), self.backend_id, cached=False)


def complete(request: CompletionRequest, backend: Backend) -> CompletionBatch:
    return backend.complete(request)


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


class SimulatedBackend(Backend):
    """Seeded stand-in for an LLM.

    ``script`` maps a regular expression to a response distribution. The first
    key (in insertion order) found anywhere in the prompt decides the answer.
    A distribution is a list of responses (uniform), a ``(responses, weights)``
    pair, or a callable ``fn(prompt, rng) -> str``. Draws depend only on the
    seed and the request, so handles built from the same script and seed agree.
    """

    def __init__(self, script: dict, seed: int = 0, cache: Optional[ResponseCache] = None,
                 backend_id: Optional[str] = None):
        if not script:
            raise ValidationError("simulation script is empty")
        super().__init__(cache)
        self.seed = seed
        self._rules = []
        for key, dist in script.items():
            self._rules.append((re.compile(key), self._normalize(key, dist)))
        self.backend_id = backend_id or f"simulated:{seed}"

    @staticmethod
    def _normalize(key, dist):
        if callable(dist):
            return dist
        if isinstance(dist, dict):
            dist = (dist["responses"], dist.get("weights"))
        if (isinstance(dist, tuple) and len(dist) == 2
                and isinstance(dist[0], (list, tuple))):
            responses, weights = dist
        else:
            responses, weights = dist, None
        responses = list(responses)
        if not responses:
            raise ValidationError(f"script entry {key!r} has no responses")
        if weights is None:
            p = np.full(len(responses), 1.0 / len(responses))
        else:
            p = np.asarray(weights, dtype=float)
            if p.shape != (len(responses),) or np.any(p < 0) or p.sum() <= 0:
                raise ValidationError(f"script entry {key!r} has invalid weights")
            p = p / p.sum()
        return responses, p

    def _generate(self, request):
        text = request.prompt_text
        rng = np.random.default_rng(
            [self.seed, _stable_int(json.dumps(request.payload(), sort_keys=True))])
        for pattern, dist in self._rules:
            if pattern.search(text):
                if callable(dist):
                    return [str(dist(text, rng)) for _ in range(request.n_samples)]
                responses, p = dist
                idx = rng.choice(len(responses), size=request.n_samples, p=p)
                return [str(responses[i]) for i in idx]
        return [UNMATCHED] * request.n_samples


def make_simulated_backend(script: dict, seed: int = 0,
                           cache: Optional[ResponseCache] = None) -> SimulatedBackend:
    return SimulatedBackend(script, seed, cache)


_RETRY_STATUS = {408, 409, 429}


class HttpChatBackend(Backend):
    """OpenAI-compatible chat endpoint with bounded concurrency and retries.

    Transient failures (timeouts, connection errors, 408/409/429 and 5xx) are
    retried up to ``max_attempts`` times with jittered exponential backoff.
    The credential is read from ``credential_env_var`` on every request, so it
    never needs to be written to a config file.
    """

    def __init__(self, endpoint: str, model: str, credential_env_var: Optional[str] = None,
                 max_in_flight: int = 4, max_attempts: int = 5, backoff_base: float = 1.0,
                 backoff_cap: float = 30.0, timeout: float = 60.0,
                 cache: Optional[ResponseCache] = None,
                 transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        super().__init__(cache)
        if not endpoint:
            raise ConfigurationError("backend endpoint is not configured")
        if max_in_flight < 1 or max_attempts < 1:
            raise ConfigurationError("max_in_flight and max_attempts must be positive")
        self.endpoint = endpoint
        self.model = model
        self.credential_env_var = credential_env_var
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.backend_id = f"http:{endpoint}:{model}"
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._sleep = sleep

    def check_credentials(self) -> dict:
        if not self.credential_env_var:
            return {}
        key = os.environ.get(self.credential_env_var)
        if not key:
            raise ConfigurationError(
                f"credential environment variable {self.credential_env_var} is not set")
        return {"Authorization": f"Bearer {key}"}

    def _post(self, body: dict, headers: dict) -> dict:
        last = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))
                self._sleep(delay * random.uniform(0.5, 1.0))
            try:
                with self._slots:
                    resp = self._client.post(self.endpoint, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("chat request failed (attempt %d): %s", attempt + 1, last)
                continue
            if resp.status_code in _RETRY_STATUS or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("chat request got %s (attempt %d)", last, attempt + 1)
                continue
            if resp.status_code >= 300:
                raise BackendError(resp.status_code, resp.text)
            return resp.json()
        raise TransportError(f"giving up after {self.max_attempts} attempts ({last})")

    def _generate(self, request):
        headers = self.check_credentials()
        out = []
        while len(out) < request.n_samples:
            body = {"model": self.model,
                    "messages": [{"role": r, "content": c} for r, c in request.messages],
                    "temperature": request.temperature, "max_tokens": request.max_tokens,
                    "n": request.n_samples - len(out)}
            data = self._post(body, headers)
            try:
                got = [ch["message"]["content"] or "" for ch in data["choices"]]
            except (KeyError, TypeError) as exc:
                raise BackendError(200, f"malformed response: {exc}") from None
            if not got:
                raise BackendError(200, "response contained no choices")
            out.extend(got)
        return out[:request.n_samples]
