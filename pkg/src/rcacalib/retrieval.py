"""Dense retrieval of historical incidents under a token budget.

Similarity is the raw inner product of provider embeddings; vectors are not
normalized, so ordering can differ from cosine similarity.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import httpx
import numpy as np

from .corpus import Corpus, Incident, count_tokens
from .errors import BackendError, ConfigurationError, TransportError, ValidationError

NO_REFERENCES = "No historical incidents available."


def serialize_reference(incident: Incident) -> str:
    return f"Incident: {incident.description}\nRoot cause: {incident.root_cause or ''}\n\n"


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("embedding must be a nonempty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embedding has non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class MockEmbedder:
    """Feature-hashed character 3-grams, deterministic and offline."""

    provider_id = "mock"

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise ValidationError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        padded = f"  {text.lower()} "
        for i in range(len(padded) - 2):
            h = zlib.crc32(padded[i:i + 3].encode("utf-8"))
            sign = 1.0 if (h >> 31) & 1 else -1.0
            vec[h % self.dim] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class HttpEmbedder:
    """Embedding backend speaking ``{"input", "model"} -> {"data": [{"embedding"}]}``."""

    def __init__(self, endpoint: str, model: str, dim: int,
                 credential_env_var: Optional[str] = None, timeout: float = 30.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.credential_env_var = credential_env_var
        self.provider_id = f"http:{endpoint}:{model}"
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self):
        if not self.credential_env_var:
            return {}
        key = os.environ.get(self.credential_env_var)
        if not key:
            raise ConfigurationError(
                f"environment variable {self.credential_env_var} is not set")
        return {"Authorization": f"Bearer {key}"}

    def embed(self, text: str) -> np.ndarray:
        headers = self._headers()
        try:
            resp = self._client.post(self.endpoint, headers=headers,
                                     json={"input": text, "model": self.model})
        except httpx.TransportError as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"embedding backend returned HTTP {resp.status_code}")
        if resp.status_code >= 300:
            raise BackendError(resp.status_code, resp.text)
        vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=float)
        if vec.shape != (self.dim,):
            raise ValidationError(
                f"provider returned dimension {vec.size}, expected {self.dim}")
        return vec


class EmbeddingCache:
    """Content-addressed embedding store persisted as JSON-Lines."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._mem: dict = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._mem[rec["sha256"]] = np.asarray(rec["values"], dtype=float)

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get(self, text: str):
        return self._mem.get(self.key(text))

    def put(self, text: str, values: np.ndarray):
        k = self.key(text)
        with self._lock:
            if k in self._mem:
                return
            self._mem[k] = np.asarray(values, dtype=float)
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"sha256": k, "dim": len(values),
                                         "values": [float(v) for v in values]}) + "\n")

    def __len__(self):
        return len(self._mem)


def embed_text(text: str, provider, cache: Optional[EmbeddingCache] = None) -> Embedding:
    """Embed ``text`` with ``provider``, consulting ``cache`` first."""
    if not text:
        raise ValidationError("cannot embed empty text")
    if cache is not None:
        hit = cache.get(text)
        if hit is not None and hit.shape == (provider.dim,):
            return Embedding(hit)
    vec = np.asarray(provider.embed(text), dtype=float)
    if vec.shape != (provider.dim,):
        raise ValidationError(
            f"provider returned dimension {vec.size}, expected {provider.dim}")
    if cache is not None:
        cache.put(text, vec)
    return Embedding(vec)


def embed_corpus(corpus: Corpus, provider, cache=None, max_workers: int = 1) -> dict:
    """Map incident id to embedding of its description."""
    texts = [inc.description for inc in corpus]
    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers) as pool:
            embs = list(pool.map(lambda t: embed_text(t, provider, cache), texts))
    else:
        embs = [embed_text(t, provider, cache) for t in texts]
    return {inc.id: e for inc, e in zip(corpus, embs)}


@dataclass(frozen=True)
class RankedEntry:
    incident_id: str
    similarity: float
    token_len: int


@dataclass(frozen=True)
class RankedList:
    entries: tuple

    def __len__(self):
        return len(self.entries)


def rank_by_similarity(query: Embedding, db: Mapping[str, Embedding],
                       corpus: Optional[Corpus] = None) -> RankedList:
    """Sort ``db`` by inner product with ``query``; ties go to the smaller id.

    ``token_len`` is filled from ``corpus`` when given (0 otherwise).
    """
    ids = sorted(db)
    if not ids:
        return RankedList(())
    for i in ids:
        if db[i].dim != query.dim:
            raise ValidationError(
                f"dimension mismatch: query {query.dim}, {i!r} has {db[i].dim}")
    # one dot product per pair, so a score never depends on what else is in db
    # (a matrix product may sum in a size-dependent order)
    sims = np.array([db[i].values @ query.values for i in ids])
    # ids are pre-sorted ascending, so a stable sort on -sim breaks ties by id
    order = np.argsort(-sims, kind="stable")
    lookup = corpus.by_id() if corpus is not None else {}
    entries = []
    for j in order:
        iid = ids[j]
        inc = lookup.get(iid)
        tl = count_tokens(serialize_reference(inc)) if inc is not None else 0
        entries.append(RankedEntry(iid, float(sims[j]), tl))
    return RankedList(tuple(entries))


@dataclass(frozen=True)
class RetrievedContext:
    query_id: str
    references: tuple
    total_tokens: int
    budget_L: int

    @property
    def k(self) -> int:
        return len(self.references)

    @property
    def low_evidence(self) -> bool:
        return self.k == 0

    @classmethod
    def empty(cls, query_id: str, budget_L: int = 0) -> "RetrievedContext":
        return cls(query_id, (), 0, budget_L)

    def render(self) -> str:
        if not self.references:
            return NO_REFERENCES
        return "".join(serialize_reference(r) for r in self.references).rstrip("\n")

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "k": self.k,
                "total_tokens": self.total_tokens, "budget_L": self.budget_L,
                "reference_ids": [r.id for r in self.references]}


def select_under_budget(ranked: RankedList, L: int, corpus: Corpus,
                        query_id: str) -> RetrievedContext:
    """Take the longest ranked prefix whose summed token lengths fit in ``L``."""
    if L < 0:
        raise ValidationError("budget L must be non-negative")
    lookup = corpus.by_id()
    refs, total = [], 0
    for entry in ranked.entries:
        if total + entry.token_len > L:
            break
        refs.append(lookup[entry.incident_id])
        total += entry.token_len
    return RetrievedContext(query_id, tuple(refs), total, L)


class Retriever:
    """Embeds a retrieval corpus once and answers budgeted queries."""

    def __init__(self, corpus: Corpus, provider, budget_L: int = 3896,
                 cache: Optional[EmbeddingCache] = None):
        corpus.require_root_causes()
        self.corpus = corpus
        self.provider = provider
        self.budget_L = budget_L
        self.cache = cache
        self.db = embed_corpus(corpus, provider, cache)

    def retrieve(self, query: Incident) -> RetrievedContext:
        q = embed_text(query.description, self.provider, self.cache)
        ranked = rank_by_similarity(q, self.db, self.corpus)
        return select_under_budget(ranked, self.budget_L, self.corpus, query.id)


def context_from_ids(query_id: str, ids: Sequence[str], corpus: Corpus,
                     budget_L: int) -> RetrievedContext:
    lookup = corpus.by_id()
    refs = tuple(lookup[i] for i in ids)
    total = sum(count_tokens(serialize_reference(r)) for r in refs)
    return RetrievedContext(query_id, refs, total, budget_L)
