"""Correctness labels for predicted root causes.

Pseudo-labels come from repeatedly asking an LLM how similar a predicted root
cause is to the confirmed one (1..3), averaging, and thresholding the mean.
The threshold is chosen to maximize F1 against a human-annotated set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .gateway import Backend, CompletionRequest
from .pace import PromptTemplate, load_templates, parse_rce_score

log = logging.getLogger(__name__)

RATING_MAX = 3
# score >= this on the 1..5 human scale counts as a correct root cause
HUMAN_POSITIVE_MIN = 4


@dataclass(frozen=True)
class SimilarityRating:
    case_id: str
    ratings: tuple
    n_queries: int
    n_per_query: int
    dropped: int = 0

    @property
    def mean_rating(self) -> float:
        return float(np.mean(self.ratings))


@dataclass(frozen=True)
class LabeledCase:
    case_id: str
    label: int
    source: str = "pseudo"
    mean_rating: Optional[float] = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError("label must be 0 or 1")
        if self.source not in ("pseudo", "human"):
            raise ValidationError(f"unknown label source {self.source!r}")


@dataclass(frozen=True)
class HumanAnnotation:
    case_id: str
    score: int
    n_labelers: int
    consensus: bool

    @property
    def flagged(self) -> bool:
        """True when the record lacks a three-labeler consensus."""
        return not self.consensus or self.n_labelers < 3

    @property
    def label(self) -> int:
        return int(self.score >= HUMAN_POSITIVE_MIN)


def rate_similarity(truth: str, predicted: str, backend: Backend, n_queries: int = 4,
                    n_per_query: int = 128, case_id: str = "",
                    template: Optional[PromptTemplate] = None, temperature: float = 1.0,
                    max_tokens: int = 16) -> SimilarityRating:
    """Sample ``n_queries * n_per_query`` similarity ratings in 1..3.

    Unparseable answers are dropped (with a warning) rather than floored.
    """
    if not truth or not predicted:
        raise ValidationError("both root causes must be nonempty")
    template = template or load_templates()["SIMILARITY"]
    prompt = template.body.format_map({"truth": truth, "predicted": predicted})
    msgs = (("system", "You compare incident root causes."), ("user", prompt))
    ratings, dropped = [], 0
    for q in range(n_queries):
        batch = backend.complete(CompletionRequest(msgs, temperature, max_tokens,
                                                   n_per_query, seed=q))
        for text in batch.completions:
            try:
                ratings.append(parse_rce_score(text, RATING_MAX))
            except ParseError:
                dropped += 1
    if not ratings:
        raise ParseError(f"case {case_id!r}: no parseable similarity rating")
    if dropped:
        log.warning("case %s: dropped %d unparseable ratings", case_id, dropped)
    return SimilarityRating(case_id, tuple(ratings), n_queries, n_per_query, dropped)


def _f1(tp, fp, fn) -> Fraction:
    if tp == 0:
        return Fraction(0)
    return Fraction(2 * tp, 2 * tp + fp + fn)


def candidate_thresholds(values: Sequence[float]) -> list:
    """Midpoints between sorted distinct values plus one sentinel on each side."""
    u = np.unique(np.asarray(values, dtype=float))
    mids = list((u[:-1] + u[1:]) / 2.0)
    return [float(u[0] - 1.0)] + [float(x) for x in mids] + [float(u[-1] + 1.0)]


def fit_correctness_threshold(ratings: Iterable) -> tuple:
    """Pick the cutoff maximizing F1 of ``mean_rating >= threshold``.

    ``ratings`` holds ``(mean_rating, human_label)`` pairs. F1 is compared
    exactly, and ties go to the smallest threshold.
    """
    arr = np.asarray(list(ratings), dtype=float).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise ValidationError("no ratings to fit")
    x, y = arr[:, 0], arr[:, 1].astype(int)
    if y.min() == y.max():
        raise ValidationError("threshold fitting needs both positive and negative labels")
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    total_pos = int(ys.sum())
    best_t, best_f = None, Fraction(-1)
    for t in candidate_thresholds(xs):
        pred = xs >= t
        tp = int(np.sum(pred & (ys == 1)))
        fp = int(np.sum(pred & (ys == 0)))
        f = _f1(tp, fp, total_pos - tp)
        if f > best_f:
            best_t, best_f = t, f
    return best_t, float(best_f)


def label_cases(ratings: Iterable[SimilarityRating], threshold: float) -> list:
    if not np.isfinite(threshold):
        raise ValidationError("threshold must be finite")
    return [LabeledCase(r.case_id, int(r.mean_rating >= threshold), "pseudo", r.mean_rating)
            for r in ratings]


def ingest_human_labels(path) -> list:
    """Read human annotations (JSON-Lines); non-consensus rows are kept but flagged."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=lineno) from None
            try:
                score = obj["score"]
                ann = HumanAnnotation(str(obj["case_id"]), score, int(obj.get("n_labelers", 3)),
                                      bool(obj.get("consensus", True)))
            except KeyError as exc:
                raise ValidationError(f"line {lineno}: missing field {exc}") from None
            if not isinstance(score, int) or isinstance(score, bool) or not 1 <= score <= 5:
                raise ValidationError(f"line {lineno}: score {score!r} outside 1..5")
            if ann.flagged:
                log.warning("line %d: case %s has no consensus label", lineno, ann.case_id)
            out.append(ann)
    return out


def write_pseudo_labels(labels: Iterable[LabeledCase], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps({"case_id": lab.case_id, "mean_rating": lab.mean_rating,
                                 "label": lab.label}) + "\n")


def read_pseudo_labels(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(LabeledCase(d["case_id"], int(d["label"]), "pseudo",
                                       d.get("mean_rating")))
    return out
