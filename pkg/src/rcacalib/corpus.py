"""Incident corpora: JSON-Lines ingestion, seeded splitting, token counting."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import ParseError, ValidationError

_FIELDS = ("id", "description", "root_cause", "service", "severity", "created_at")


@dataclass(frozen=True)
class Incident:
    id: str
    description: str
    root_cause: Optional[str] = None
    service: Optional[str] = None
    severity: Optional[int] = None
    created_at: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("incident id must be a nonempty string")
        if not isinstance(self.description, str) or not self.description:
            raise ValidationError(f"incident {self.id!r} has an empty description")
        if self.severity is not None and not isinstance(self.severity, int):
            raise ValidationError(f"incident {self.id!r}: severity must be an integer")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, obj: dict) -> "Incident":
        if not isinstance(obj, dict):
            raise ValidationError("incident record must be a JSON object")
        missing = [k for k in ("id", "description") if k not in obj]
        if missing:
            raise ValidationError(f"missing field(s): {', '.join(missing)}")
        return cls(**{k: obj.get(k) for k in _FIELDS})


@dataclass(frozen=True)
class Corpus:
    incidents: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "incidents", tuple(self.incidents))
        seen = set()
        for inc in self.incidents:
            if inc.id in seen:
                raise ValidationError(f"duplicate incident id {inc.id!r}")
            seen.add(inc.id)

    @property
    def n_max(self) -> int:
        return len(self.incidents)

    def __len__(self):
        return len(self.incidents)

    def __iter__(self):
        return iter(self.incidents)

    def by_id(self) -> dict:
        return {inc.id: inc for inc in self.incidents}

    def require_root_causes(self):
        """Raise unless every incident carries a ground-truth root cause."""
        for inc in self.incidents:
            if not inc.root_cause:
                raise ValidationError(
                    f"retrieval incident {inc.id!r} has no root_cause")


@dataclass(frozen=True)
class SplitSpec:
    retrieval_n: int
    validation_n: int
    test_n: int
    seed: int = 0

    def __post_init__(self):
        if min(self.retrieval_n, self.validation_n, self.test_n) < 0:
            raise ValidationError("split counts must be non-negative")

    @property
    def total(self) -> int:
        return self.retrieval_n + self.validation_n + self.test_n


def ingest_incidents(path) -> Corpus:
    """Read a JSON-Lines incident file, one object per line.

    Blank lines are skipped. Malformed JSON raises :class:`ParseError` with the
    1-based line number; schema problems and duplicate ids raise
    :class:`ValidationError`.
    """
    incidents = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=lineno) from None
            try:
                inc = Incident.from_dict(obj)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            if inc.id in seen:
                raise ValidationError(
                    f"line {lineno}: duplicate incident id {inc.id!r} "
                    f"(first seen on line {seen[inc.id]})")
            seen[inc.id] = lineno
            incidents.append(inc)
    return Corpus(incidents)


def write_incidents(corpus: Iterable[Incident], path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for inc in corpus:
            fh.write(json.dumps(inc.to_dict(), ensure_ascii=False) + "\n")


def split_corpus(corpus: Corpus, spec: SplitSpec):
    """Seeded shuffle, then slice into (retrieval, validation, test)."""
    if spec.total > corpus.n_max:
        raise ValidationError(
            f"split needs {spec.total} incidents but corpus has {corpus.n_max}")
    order = np.random.default_rng(spec.seed).permutation(corpus.n_max)
    items = [corpus.incidents[i] for i in order]
    a = spec.retrieval_n
    b = a + spec.validation_n
    c = b + spec.test_n
    return Corpus(items[:a]), Corpus(items[a:b]), Corpus(items[b:c])


Tokenizer = Callable[[str], int]


def approx_token_count(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


_tokenizer: Tokenizer = approx_token_count


def set_tokenizer(fn: Optional[Tokenizer]) -> None:
    """Install a backend-exact token counter; ``None`` restores the default."""
    global _tokenizer
    _tokenizer = fn or approx_token_count


def count_tokens(text: str) -> int:
    return _tokenizer(text)
