"""Two-phase confidence estimation for a predicted root cause.

Phase one (COE) asks whether the retrieved history is enough evidence to judge
the incident at all: ``k1`` analyses are sampled, then ``k2`` Yes/No votes per
analysis. Phase two (RCE) samples ``k1'`` analyses of the candidate root cause
and ``k2'`` integer scores on a 1..S scale per analysis. Each phase is reduced
to the mean over its full vote/score matrix.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import string
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .corpus import Incident
from .errors import ParseError, ValidationError
from .gateway import Backend, CompletionRequest
from .retrieval import RetrievedContext

log = logging.getLogger(__name__)

MODES = ("full", "no-context", "no-analysis")

_REQUIRED = {
    "COE_ANALYSIS": {"references", "incident"},
    "COE_SCORE": {"references", "incident", "analysis"},
    "RCE_ANALYSIS": {"references", "incident", "candidate_root_cause"},
    "RCE_SCORE": {"references", "incident", "candidate_root_cause", "analysis"},
    "SIMILARITY": {"truth", "predicted"},
}
_OPTIONAL = {"scale_max"}


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    def __post_init__(self):
        if self.template_id not in _REQUIRED:
            raise ValidationError(f"unknown template id {self.template_id!r}")
        found = self.placeholders
        need = _REQUIRED[self.template_id]
        if not need <= found or found - need - _OPTIONAL:
            raise ValidationError(
                f"template {self.template_id} must use placeholders {sorted(need)}, "
                f"found {sorted(found)}")

    @property
    def placeholders(self) -> set:
        return {name for _, name, _, _ in string.Formatter().parse(self.body) if name}

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()[:16]


def load_templates(directory=None) -> dict:
    """Load ``<TEMPLATE_ID>.txt`` files; missing ones fall back to the packaged set."""
    out = {}
    for tid in _REQUIRED:
        body = None
        if directory is not None:
            p = Path(directory) / f"{tid}.txt"
            if p.exists():
                body = p.read_text(encoding="utf-8")
        if body is None:
            body = resources.files("rcacalib").joinpath("templates").joinpath(f"{tid}.txt").read_text(
                encoding="utf-8")
        out[tid] = PromptTemplate(tid, body)
    return out


@dataclass(frozen=True)
class QueryCase:
    incident: Incident
    predicted_root_cause: str
    predictor_id: str = ""

    def __post_init__(self):
        if not self.predicted_root_cause or not self.predicted_root_cause.strip():
            raise ValidationError(f"case {self.incident.id!r}: empty predicted root cause")

    @property
    def case_id(self) -> str:
        if self.predictor_id:
            return f"{self.incident.id}@{self.predictor_id}"
        return self.incident.id


@dataclass(frozen=True)
class SamplingConfig:
    k1: int = 4
    k2: int = 8
    k1p: int = 4
    k2p: int = 8
    temperature: float = 1.0
    analysis_max_tokens: int = 256
    score_max_tokens: int = 16
    rce_scale_max: int = 5

    def __post_init__(self):
        for name in ("k1", "k2", "k1p", "k2p", "analysis_max_tokens", "score_max_tokens"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.rce_scale_max < 2:
            raise ValidationError("rce_scale_max must be at least 2")
        if self.temperature < 0:
            raise ValidationError("temperature must be non-negative")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class AnalysisRecord:
    phase: str
    text: str
    index: int


@dataclass(frozen=True)
class ScoreRecord:
    case_id: str
    mode: str
    coe_votes: tuple
    rce_scores: tuple
    coe_mean: float
    rce_mean: float
    analyses: tuple = ()
    cfg_hash: str = ""
    parse_failures: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown scoring mode {self.mode!r}")
        votes = np.asarray(self.coe_votes, dtype=float)
        scores = np.asarray(self.rce_scores, dtype=float)
        if votes.ndim != 2 or votes.size == 0 or scores.ndim != 2 or scores.size == 0:
            raise ValidationError("vote and score matrices must be nonempty and rectangular")
        if abs(votes.mean() - self.coe_mean) > 1e-12 or abs(scores.mean() - self.rce_mean) > 1e-12:
            raise ValidationError("stored means disagree with the sample matrices")

    def to_dict(self) -> dict:
        return {"case_id": self.case_id, "mode": self.mode, "cfg_hash": self.cfg_hash,
                "coe_votes": [list(r) for r in self.coe_votes],
                "rce_scores": [list(r) for r in self.rce_scores],
                "coe_mean": self.coe_mean, "rce_mean": self.rce_mean,
                "parse_failures": self.parse_failures,
                "analyses": [asdict(a) for a in self.analyses]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreRecord":
        return cls(case_id=d["case_id"], mode=d["mode"],
                   coe_votes=tuple(tuple(int(v) for v in r) for r in d["coe_votes"]),
                   rce_scores=tuple(tuple(int(v) for v in r) for r in d["rce_scores"]),
                   coe_mean=float(d["coe_mean"]), rce_mean=float(d["rce_mean"]),
                   analyses=tuple(AnalysisRecord(**a) for a in d.get("analyses", ())),
                   cfg_hash=d.get("cfg_hash", ""),
                   parse_failures=int(d.get("parse_failures", 0)))


class ScoreCache:
    """Score records keyed by ``(case_id, mode, cfg_hash)``, appended as JSON-Lines."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._mem: dict = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = ScoreRecord.from_dict(json.loads(line))
                        self._mem[(rec.case_id, rec.mode, rec.cfg_hash)] = rec

    def get(self, case_id, mode, cfg_hash) -> Optional[ScoreRecord]:
        return self._mem.get((case_id, mode, cfg_hash))

    def put(self, rec: ScoreRecord):
        key = (rec.case_id, rec.mode, rec.cfg_hash)
        with self._lock:
            if key in self._mem:
                return
            self._mem[key] = rec
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")

    def __len__(self):
        return len(self._mem)


# ---------------------------------------------------------------------------
# prompt rendering and response parsing
# ---------------------------------------------------------------------------

def render_prompt(template: PromptTemplate, context: RetrievedContext, case: QueryCase,
                  analysis: Optional[AnalysisRecord] = None, mode: str = "full",
                  scale_max: int = 5) -> str:
    """Fill ``template`` for one case.

    References appear in rank order; an empty context renders a fixed
    "no history" line. Score templates need ``analysis`` unless ``mode`` is
    ``"no-analysis"``, in which case the analysis block is left out.
    """
    values = {"references": context.render(), "incident": case.incident.description,
              "candidate_root_cause": case.predicted_root_cause, "scale_max": str(scale_max)}
    if analysis is not None:
        values["analysis"] = f"Analysis:\n{analysis.text}\n"
    elif mode == "no-analysis":
        values["analysis"] = ""
    for name in sorted(template.placeholders):
        if name not in values:
            raise ValidationError(f"no value for placeholder {{{name}}} in {template.template_id}")
    return template.body.format_map(values)


_CHOICE = re.compile(r"\(?([AB])[.):]?")
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def parse_coe_choice(text: str) -> int:
    """Map the first standalone ``A``/``B`` token to 1 (Yes) or 0 (No).

    Lowercase letters count only when they are the entire answer, so the
    article "a" inside a sentence is never read as a vote.
    """
    bare = text.strip().strip("*\"'`").upper()
    if bare in ("A", "B"):
        return 1 if bare == "A" else 0
    for tok in text.split():
        m = _CHOICE.fullmatch(tok.strip("*\"'`"))
        if m:
            return 1 if m.group(1) in "Aa" else 0
    raise ParseError(f"no A/B choice in {text[:60]!r}")


def parse_rce_score(text: str, S: int) -> int:
    """Return the first number in ``text`` if it is an integer within [1, S]."""
    if S < 2:
        raise ValidationError("scale maximum must be at least 2")
    m = _NUMBER.search(text)
    if not m:
        raise ParseError(f"no integer in {text[:60]!r}")
    lit = m.group(0)
    if "." in lit:
        raise ParseError(f"first number {lit!r} is not an integer")
    val = int(lit)
    if not 1 <= val <= S:
        raise ParseError(f"score {val} outside [1, {S}]")
    return val


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

class PhaseResult(NamedTuple):
    mean: float
    matrix: tuple
    analyses: tuple
    parse_failures: int


def _messages(prompt: str):
    return (("system", "You are an expert site reliability engineer."), ("user", prompt))


def _run_phase(phase, case, context, cfg, backend, mode, templates, k_a, k_s, parser, floor):
    if mode not in MODES:
        raise ValidationError(f"unknown scoring mode {mode!r}")
    if mode == "no-context":
        context = RetrievedContext.empty(context.query_id, context.budget_L)
    a_tpl = templates[f"{phase}_ANALYSIS"]
    s_tpl = templates[f"{phase}_SCORE"]
    S = cfg.rce_scale_max

    analyses = []
    if mode != "no-analysis":
        prompt = render_prompt(a_tpl, context, case, mode=mode, scale_max=S)
        batch = backend.complete(CompletionRequest(
            _messages(prompt), cfg.temperature, cfg.analysis_max_tokens, k_a, seed=0))
        analyses = [AnalysisRecord(phase, t, i) for i, t in enumerate(batch.completions)]
    conditioning = analyses or [None]

    matrix, failures = [], 0
    for i, analysis in enumerate(conditioning):
        prompt = render_prompt(s_tpl, context, case, analysis, mode=mode, scale_max=S)
        msgs = _messages(prompt)
        batch = backend.complete(CompletionRequest(
            msgs, cfg.temperature, cfg.score_max_tokens, k_s, seed=i + 1))
        row = []
        for j, text in enumerate(batch.completions):
            try:
                row.append(parser(text))
                continue
            except ParseError:
                pass
            retry = backend.complete(CompletionRequest(
                msgs, cfg.temperature, cfg.score_max_tokens, 1,
                seed=-(i * k_s + j + 1)))
            try:
                row.append(parser(retry.completions[0]))
            except ParseError:
                failures += 1
                row.append(floor)
                log.warning("%s %s: unparseable response after resample, using %d",
                            case.case_id, phase, floor)
        matrix.append(tuple(row))
    mean = float(np.mean(matrix))
    return PhaseResult(mean, tuple(matrix), tuple(analyses), failures)


def estimate_coe(case: QueryCase, context: RetrievedContext, cfg: SamplingConfig,
                 backend: Backend, mode: str = "full", templates=None) -> PhaseResult:
    """COE phase. ``mean`` is the fraction of Yes votes, in [0, 1]."""
    templates = templates or load_templates()
    return _run_phase("COE", case, context, cfg, backend, mode, templates,
                      cfg.k1, cfg.k2, parse_coe_choice, 0)


def estimate_rce(case: QueryCase, context: RetrievedContext, cfg: SamplingConfig,
                 backend: Backend, mode: str = "full", templates=None) -> PhaseResult:
    """RCE phase. ``mean`` is the average score, in [1, S]."""
    templates = templates or load_templates()
    S = cfg.rce_scale_max
    return _run_phase("RCE", case, context, cfg, backend, mode, templates,
                      cfg.k1p, cfg.k2p, lambda t: parse_rce_score(t, S), 1)


def scoring_hash(cfg: SamplingConfig, backend: Backend, templates: dict) -> str:
    parts = [cfg.digest(), backend.backend_id] + [templates[k].digest for k in sorted(templates)]
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def score_case(case: QueryCase, context: RetrievedContext, cfg: SamplingConfig,
               backend: Backend, mode: str = "full", cache: Optional[ScoreCache] = None,
               templates=None) -> ScoreRecord:
    """Run COE then RCE for one case, reusing a cached record when present."""
    templates = templates or load_templates()
    h = scoring_hash(cfg, backend, templates)
    if cache is not None:
        hit = cache.get(case.case_id, mode, h)
        if hit is not None:
            return hit
    coe = estimate_coe(case, context, cfg, backend, mode, templates)
    rce = estimate_rce(case, context, cfg, backend, mode, templates)
    rec = ScoreRecord(case_id=case.case_id, mode=mode, coe_votes=coe.matrix,
                      rce_scores=rce.matrix, coe_mean=coe.mean, rce_mean=rce.mean,
                      analyses=coe.analyses + rce.analyses, cfg_hash=h,
                      parse_failures=coe.parse_failures + rce.parse_failures)
    if cache is not None:
        cache.put(rec)
    return rec


def score_cases(cases, contexts, cfg: SamplingConfig, backend: Backend, mode: str = "full",
                cache: Optional[ScoreCache] = None, templates=None,
                max_workers: int = 1) -> list:
    """Score many cases; ``contexts`` is aligned with ``cases``. Output keeps input order."""
    templates = templates or load_templates()
    jobs = list(zip(cases, contexts))
    if max_workers <= 1:
        return [score_case(c, x, cfg, backend, mode, cache, templates) for c, x in jobs]
    with ThreadPoolExecutor(max_workers) as pool:
        return list(pool.map(
            lambda job: score_case(job[0], job[1], cfg, backend, mode, cache, templates), jobs))
