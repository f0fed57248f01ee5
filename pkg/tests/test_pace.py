import json
import random
import string

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcacalib.corpus import Incident
from rcacalib.errors import ParseError, ValidationError
from rcacalib.gateway import SimulatedBackend
from rcacalib.pace import (AnalysisRecord, PromptTemplate, QueryCase, SamplingConfig,
                           ScoreCache, ScoreRecord, estimate_coe, estimate_rce,
                           load_templates, parse_coe_choice, parse_rce_score, render_prompt,
                           score_case)
from rcacalib.retrieval import NO_REFERENCES, RetrievedContext

TEMPLATES = load_templates()
REFS = (Incident("h1", "first historical incident", "first cause"),
        Incident("h2", "second historical incident", "second cause"))
CTX = RetrievedContext("q1", REFS, 40, 3896)
CASE = QueryCase(Incident("q1", "new incident text"), "predicted cause")


class Recording(SimulatedBackend):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.prompts, self.completions = [], 0

    def _generate(self, request):
        self.prompts.append(request.prompt_text)
        out = super()._generate(request)
        self.completions += len(out)
        return out


def script(coe=("A", "B"), rce=("1", "2", "3", "4", "5")):
    return {"Task: COE_ANALYSIS": ["coe analysis"], "Task: RCE_ANALYSIS": ["rce analysis"],
            "Task: COE_SCORE": coe, "Task: RCE_SCORE": rce}


# --- rendering -------------------------------------------------------------

def test_references_in_rank_order():
    text = render_prompt(TEMPLATES["COE_ANALYSIS"], CTX, CASE)
    assert text.index("first historical") < text.index("second historical")


def test_empty_context_line():
    text = render_prompt(TEMPLATES["COE_ANALYSIS"], RetrievedContext.empty("q1"), CASE)
    assert NO_REFERENCES in text


def test_score_template_needs_analysis_in_full_mode():
    with pytest.raises(ValidationError, match="analysis"):
        render_prompt(TEMPLATES["RCE_SCORE"], CTX, CASE, None, mode="full")
    text = render_prompt(TEMPLATES["RCE_SCORE"], CTX, CASE, AnalysisRecord("RCE", "why", 0))
    assert "Analysis:\nwhy" in text and "predicted cause" in text
    assert "Analysis:" not in render_prompt(TEMPLATES["RCE_SCORE"], CTX, CASE, mode="no-analysis")


def test_template_placeholder_contract(tmp_path):
    with pytest.raises(ValidationError):
        PromptTemplate("COE_SCORE", "only {incident}")
    (tmp_path / "COE_SCORE.txt").write_text("Task: COE_SCORE\n{references}{incident}{analysis}?")
    t = load_templates(tmp_path)
    assert t["COE_SCORE"].body.endswith("?") and t["RCE_SCORE"] == TEMPLATES["RCE_SCORE"]


# --- parsing ---------------------------------------------------------------

@pytest.mark.parametrize("text,vote", [("A", 1), ("Answer: B.", 0), ("(A) Yes", 1), ("b", 0),
                                       ("**B**", 0), ("I pick A", 1), ("B) No", 0)])
def test_parse_coe(text, vote):
    assert parse_coe_choice(text) == vote


@pytest.mark.parametrize("text", ["it depends", "", "a bit unclear", "ABBA", "Yes"])
def test_parse_coe_failures(text):
    with pytest.raises(ParseError):
        parse_coe_choice(text)


@pytest.mark.parametrize("text,score", [("4", 4), ("Score: 5/5", 5), (" 1.", 1), ("3 out of 5", 3)])
def test_parse_rce(text, score):
    assert parse_rce_score(text, 5) == score


@pytest.mark.parametrize("text", ["11", "0", "-2", "4.5", "none", ""])
def test_parse_rce_failures(text):
    with pytest.raises(ParseError):
        parse_rce_score(text, 5)


_noise = st.text(alphabet=string.ascii_lowercase + " ,;!?-", max_size=20)


@given(_noise, st.sampled_from(["A", "B", "(A)", "B.", "A:"]), _noise)
def test_parse_coe_fuzzed_context(prefix, choice, suffix):
    text = f"{prefix} {choice} {suffix}"
    assert parse_coe_choice(text) == (1 if "A" in choice else 0)


@given(st.text(alphabet=string.ascii_letters + " :,;!?-", max_size=20),
       st.integers(1, 7), st.text(alphabet=string.ascii_letters + " ,;!?/", max_size=20))
def test_parse_rce_fuzzed_context(prefix, value, suffix):
    assert parse_rce_score(f"{prefix} {value} {suffix}", 7) == value


# --- estimation ------------------------------------------------------------

def test_coe_mean_simulated_rate():
    b = SimulatedBackend(script(coe=(["A", "B"], [0.6, 0.4])), seed=3)
    res = estimate_coe(CASE, CTX, SamplingConfig(k1=16, k2=16), b)
    assert 0.5 <= res.mean <= 0.7
    assert np.asarray(res.matrix).shape == (16, 16)


def test_rce_mean_uniform():
    res = estimate_rce(CASE, CTX, SamplingConfig(k1p=8, k2p=8), SimulatedBackend(script(), 5))
    assert 2.6 <= res.mean <= 3.4


def test_single_sample_reduces_to_vote():
    b = SimulatedBackend(script(coe=("B",), rce=("4",)), 0)
    cfg = SamplingConfig(1, 1, 1, 1)
    assert estimate_coe(CASE, CTX, cfg, b).mean == 0.0
    assert estimate_rce(CASE, CTX, cfg, b).mean == 4.0


def test_parse_failure_floor_and_count():
    b = Recording(script(coe=("maybe",), rce=("no idea",)), 0)
    cfg = SamplingConfig(1, 2, 1, 3)
    coe = estimate_coe(CASE, CTX, cfg, b)
    rce = estimate_rce(CASE, CTX, cfg, b)
    assert coe.matrix == ((0, 0),) and coe.parse_failures == 2
    assert rce.matrix == ((1, 1, 1),) and rce.parse_failures == 3
    # analysis + score batch + one resample per failure, per phase
    assert len(b.prompts) == (1 + 1 + 2) + (1 + 1 + 3)


def test_modes():
    cfg = SamplingConfig(2, 3, 2, 3)
    b = Recording(script(), 0)
    full = score_case(CASE, CTX, cfg, b, "full")
    assert len(full.analyses) == 4
    assert np.asarray(full.coe_votes).shape == (2, 3)

    b = Recording(script(), 0)
    score_case(CASE, CTX, cfg, b, "no-context")
    assert not any("first historical" in p or "second cause" in p for p in b.prompts)
    assert all(NO_REFERENCES in p for p in b.prompts)

    b = Recording(script(), 0)
    rec = score_case(CASE, CTX, cfg, b, "no-analysis")
    assert rec.analyses == ()
    assert b.completions == cfg.k2 + cfg.k2p
    assert np.asarray(rec.coe_votes).shape == (1, 3)


def test_determinism_and_warm_cache(tmp_path):
    cfg = SamplingConfig(2, 4, 2, 4)
    a = score_case(CASE, CTX, cfg, SimulatedBackend(script(), 11))
    b = score_case(CASE, CTX, cfg, SimulatedBackend(script(), 11))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    cache = ScoreCache(tmp_path / "s.jsonl")
    first = score_case(CASE, CTX, cfg, SimulatedBackend(script(), 11), cache=cache)
    backend = Recording(script(), 11)
    again = score_case(CASE, CTX, cfg, backend, cache=ScoreCache(tmp_path / "s.jsonl"))
    assert again == first and backend.prompts == []


def test_score_record_round_trip_and_validation():
    rec = score_case(CASE, CTX, SamplingConfig(1, 2, 1, 2), SimulatedBackend(script(), 1))
    assert ScoreRecord.from_dict(json.loads(json.dumps(rec.to_dict()))) == rec
    with pytest.raises(ValidationError):
        ScoreRecord("c", "full", ((1, 0),), ((3,),), 0.9, 3.0)


@given(st.lists(st.lists(st.integers(0, 1), min_size=3, max_size=3), min_size=1, max_size=5))
def test_mean_of_rows_equals_global_mean(matrix):
    arr = np.array(matrix, dtype=float)
    assert np.mean([r.mean() for r in arr]) == pytest.approx(arr.mean(), abs=1e-12)


def test_garbage_never_parses_silently():
    rng = random.Random(0)
    alphabet = "cdefghxyz!?.,;:-_ ()[]"
    for _ in range(1000):
        g = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 30)))
        with pytest.raises(ParseError):
            parse_coe_choice(g)
        with pytest.raises(ParseError):
            parse_rce_score(g, 5)
