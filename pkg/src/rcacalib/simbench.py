"""Synthetic incidents and a latent-correctness scorer simulation.

Each simulated case has a latent ``quality`` that drives whether the predicted
root cause is correct, and an independent ``evidence`` level standing for how
useful the retrieved history is. COE votes are Bernoulli(evidence). RCE scores
come from a discretized Gaussian on 1..S whose centre moves with correctness
and quality when evidence is high, and drifts toward an inflated, wider
"hallucinated" distribution when evidence is low: incorrect root causes get
over-rated and correct ones under-rated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import report
from .calib import (compute_ece, fit_calibration, assign_confidences, normalize_rce,
                    reliability_report, transform_scores)
from .corpus import Corpus, Incident
from .errors import ValidationError
from .pace import QueryCase, SamplingConfig, ScoreRecord

ALL_MODES = ("full", "rce_only", "uniform_combined", "uniform_rce_only",
             "no_context", "no_analysis")

_SERVICES = ("storage", "compute", "network", "auth", "database", "queue", "dns",
             "billing", "cdn", "monitoring", "scheduler", "gateway")
_COMPONENTS = ("frontend", "control plane", "data plane", "cache", "load balancer",
               "replica set", "worker pool", "config service")
_SYMPTOMS = ("elevated latency", "5xx error spike", "timeouts", "failed health checks",
             "throttled requests", "connection resets", "stale reads", "crash loops")
_CAUSES = ("expired TLS certificate", "bad configuration rollout", "exhausted connection pool",
           "disk full on {c} nodes", "memory leak in {c}", "misrouted traffic after failover",
           "quota limit reached", "dependency outage upstream", "clock skew on {c} hosts",
           "regression in the latest {c} deployment")
_REGIONS = ("east-us", "west-eu", "south-asia", "central-us", "north-eu")


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class BenchConfig:
    alpha: float = 2.0
    q0: float = 0.4
    val_n: int = 2000
    test_n: int = 3000
    seeds: tuple = (42,)
    modes: tuple = ALL_MODES
    m: int = 5
    M: int = 5
    w_grid_step: float = 0.01
    band_level: float = 0.95
    confidence: str = "mean-score"
    hist_bins: int = 10
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    evidence_a: float = 2.0
    evidence_b: float = 4.0
    rce_base: float = 1.8
    rce_label_gain: float = 2.0
    rce_quality_gain: float = 0.4
    hallucination_centre: float = 3.8
    rce_sigma: float = 0.5
    hallucination_blur: float = 1.2
    no_context_evidence: float = 0.2
    no_analysis_focus: float = 0.7
    no_analysis_blur: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "modes", tuple(self.modes))
        unknown = set(self.modes) - set(ALL_MODES)
        if unknown:
            raise ValidationError(f"unknown bench modes {sorted(unknown)}")
        if self.val_n <= 0 or self.test_n <= 0:
            raise ValidationError("val_n and test_n must be positive")
        if not self.seeds:
            raise ValidationError("at least one seed is required")

    @classmethod
    def from_section(cls, section, sampling: Optional[SamplingConfig] = None) -> "BenchConfig":
        """Build from a ``[simbench]`` config section (any str->str mapping)."""
        kw = {}
        types = {f.name: f.type for f in cls.__dataclass_fields__.values()}
        for key, raw in section.items():
            if key not in types or key == "sampling":
                raise ValidationError(f"unknown simbench key {key!r}")
            if key == "seeds":
                kw[key] = tuple(int(s) for s in str(raw).replace(",", " ").split())
            elif key == "modes":
                kw[key] = tuple(s.replace("-", "_") for s in str(raw).replace(",", " ").split())
            elif key == "confidence":
                kw[key] = str(raw)
            elif types[key] == "int":
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        if sampling is not None:
            kw["sampling"] = sampling
        return cls(**kw)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def _topic(t: int):
    svc = _SERVICES[t % len(_SERVICES)] + ("" if t < len(_SERVICES) else f"-{t}")
    comp = _COMPONENTS[(3 * t + 1) % len(_COMPONENTS)]
    cause = _CAUSES[(5 * t + 2) % len(_CAUSES)].format(c=comp)
    return svc, comp, cause


def generate_corpus(seed: int, n: int, topics: int = 8) -> Corpus:
    """Templated incidents clustered by topic; deterministic per seed.

    Incidents of one topic share service, component and root-cause wording, so
    the mock embedder places them close together.
    """
    if n < 0 or topics < 1:
        raise ValidationError("need n >= 0 and topics >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        t = int(rng.integers(topics))
        svc, comp, cause = _topic(t)
        symptom = _SYMPTOMS[int(rng.integers(len(_SYMPTOMS)))]
        region = _REGIONS[int(rng.integers(len(_REGIONS)))]
        pct = int(rng.integers(5, 95))
        desc = (f"{svc} service: {symptom} in the {comp} ({region}); "
                f"about {pct}% of requests affected.")
        rc = f"{cause} in {svc} {comp}"
        out.append(Incident(id=f"syn-{seed}-{i:05d}", description=desc, root_cause=rc,
                            service=svc, severity=int(rng.integers(1, 5))))
    return Corpus(out)


def make_predictions(corpus: Corpus, seed: int, accuracy: float = 0.4,
                     predictor_id: str = "synthetic") -> list:
    """Pair each incident with a predicted root cause that is right with
    probability ``accuracy`` and otherwise borrowed from a different incident."""
    rng = np.random.default_rng(seed)
    incs = list(corpus)
    causes = sorted({i.root_cause for i in incs if i.root_cause})
    cases = []
    for inc in incs:
        if rng.random() < accuracy or len(causes) < 2:
            pred = inc.root_cause
        else:
            wrong = [c for c in causes if c != inc.root_cause]
            pred = wrong[int(rng.integers(len(wrong)))]
        cases.append(QueryCase(inc, pred, predictor_id))
    return cases


def pipeline_script(p_yes_with_refs: float = 0.8, p_yes_without: float = 0.2) -> dict:
    """Response script for the simulated backend that reacts to prompt content.

    COE votes lean Yes when references are present. RCE scores rise with the
    share of the five best-ranked references whose root cause matches the
    candidate verbatim. Similarity
    ratings compare the two root causes verbatim.
    """
    def coe_vote(prompt, rng):
        p = p_yes_without if "No historical incidents available." in prompt else p_yes_with_refs
        return "A" if rng.random() < p else "B"

    def rce_score(prompt, rng):
        refs, _, rest = prompt.partition("New incident:")
        cand = rest.split("Candidate root cause:", 1)[-1].strip().split("\n", 1)[0]
        causes = [ln.split("Root cause:", 1)[1].strip()
                  for ln in refs.splitlines() if "Root cause:" in ln][:5]
        share = sum(c == cand for c in causes) / len(causes) if causes else 0.0
        centre = 1.6 + 2.8 * share
        return str(int(np.clip(np.rint(rng.normal(centre, 0.9)), 1, 5)))

    def similarity(prompt, rng):
        truth = prompt.split("Confirmed root cause:", 1)[1].split("Predicted root cause:")[0]
        pred = prompt.split("Predicted root cause:", 1)[1].split("How similar")[0]
        same = truth.strip() == pred.strip()
        return str(rng.choice([1, 2, 3], p=[0.05, 0.15, 0.8] if same else [0.7, 0.25, 0.05]))

    return {
        r"Task: COE_ANALYSIS": ["The historical incidents share the affected service; "
                                "the closest ones describe the same symptom."],
        r"Task: COE_SCORE": coe_vote,
        r"Task: RCE_ANALYSIS": ["The candidate is specific and consistent with similar "
                                "historical incidents."],
        r"Task: RCE_SCORE": rce_score,
        r"Task: SIMILARITY": similarity,
    }


# ---------------------------------------------------------------------------
# latent model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatentCase:
    quality: float
    p_correct: float
    true_label: int
    coe_rate: float
    rce_dist: tuple
    case_id: str = ""

    def __post_init__(self):
        if abs(sum(self.rce_dist) - 1.0) > 1e-9:
            raise ValidationError("rce_dist must sum to 1")


def _rce_distribution(centre, sigma, S):
    ks = np.arange(1, S + 1)
    centre = np.atleast_1d(centre)[:, None]
    sigma = np.atleast_1d(sigma)[:, None]
    logp = -0.5 * ((ks[None, :] - centre) / sigma) ** 2
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


def _mode_params(quality, label, evidence, mode, cfg: BenchConfig):
    """COE rate and RCE distribution per case under a scoring ``mode``."""
    S = cfg.sampling.rce_scale_max
    informative = cfg.rce_base + cfg.rce_label_gain * label + cfg.rce_quality_gain * quality
    # map the 1..5 design scale onto 1..S
    informative = 1 + (informative - 1) * (S - 1) / 4
    halluc = 1 + (cfg.hallucination_centre - 1) * (S - 1) / 4
    focus = np.asarray(evidence, dtype=float)
    extra_blur = 0.0
    if mode == "no-context":
        focus = focus * cfg.no_context_evidence
        evidence = focus
    elif mode == "no-analysis":
        focus = focus * cfg.no_analysis_focus
        extra_blur = cfg.no_analysis_blur
    centre = focus * informative + (1 - focus) * halluc
    sigma = (cfg.rce_sigma + cfg.hallucination_blur * (1 - focus) + extra_blur) * (S - 1) / 4
    return np.asarray(evidence, dtype=float), _rce_distribution(centre, sigma, S)


def draw_latents(rng, n: int, cfg: BenchConfig):
    quality = rng.normal(size=n)
    p = _logistic(cfg.alpha * (quality - cfg.q0))
    label = (rng.random(n) < p).astype(int)
    evidence = rng.beta(cfg.evidence_a, cfg.evidence_b, size=n)
    return quality, p, label, evidence


def latent_case(quality: float, label: int, evidence: float, cfg: BenchConfig,
                mode: str = "full", case_id: str = "") -> LatentCase:
    rate, dist = _mode_params(np.array([quality]), np.array([label]),
                              np.array([evidence]), mode, cfg)
    p = float(_logistic(cfg.alpha * (quality - cfg.q0)))
    return LatentCase(float(quality), p, int(label), float(rate[0]),
                      tuple(float(x) for x in dist[0]), case_id)


def case_seed(master_seed: int, case_id: str) -> int:
    h = hashlib.sha256(f"{master_seed}:{case_id}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def simulate_scores(case: LatentCase, cfg: SamplingConfig, seed: int, mode: str = "full"):
    """Draw one case's vote and score matrices; returns ``(ScoreRecord, true_label)``."""
    rng = np.random.default_rng(seed)
    k1 = 1 if mode == "no-analysis" else cfg.k1
    k1p = 1 if mode == "no-analysis" else cfg.k1p
    votes = (rng.random((k1, cfg.k2)) < case.coe_rate).astype(int)
    cum = np.cumsum(case.rce_dist)
    scores = np.minimum(np.searchsorted(cum, rng.random((k1p, cfg.k2p)), side="right") + 1,
                        cfg.rce_scale_max)
    rec = ScoreRecord(case_id=case.case_id or f"sim-{seed}", mode=mode,
                      coe_votes=tuple(tuple(int(v) for v in r) for r in votes),
                      rce_scores=tuple(tuple(int(v) for v in r) for r in scores),
                      coe_mean=float(votes.mean()), rce_mean=float(scores.mean()),
                      cfg_hash=cfg.digest())
    return rec, case.true_label


def simulate_batch(rng, quality, label, evidence, cfg: BenchConfig, mode: str = "full"):
    """Vectorised equivalent of :func:`simulate_scores` for many cases.

    Returns ``(coe_mean, rce_mean)`` arrays.
    """
    sc = cfg.sampling
    rate, dist = _mode_params(quality, label, evidence, mode, cfg)
    n = rate.size
    k1 = 1 if mode == "no-analysis" else sc.k1
    k1p = 1 if mode == "no-analysis" else sc.k1p
    votes = rng.random((n, k1 * sc.k2)) < rate[:, None]
    cum = np.cumsum(dist, axis=1)
    u = rng.random((n, k1p * sc.k2p))
    scores = np.minimum((u[:, :, None] >= cum[:, None, :]).sum(axis=2) + 1, sc.rce_scale_max)
    return votes.mean(axis=1), scores.mean(axis=1)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

_SCORE_MODE = {"full": "full", "rce_only": "full", "uniform_combined": "full",
               "uniform_rce_only": "full", "no_context": "no-context",
               "no_analysis": "no-analysis"}


@dataclass
class BenchReport:
    config: dict
    seeds: list
    ece: dict
    models: dict
    reliability: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)

    def mean_ece(self) -> dict:
        return {m: float(np.mean(v)) for m, v in self.ece.items()}

    def to_dict(self) -> dict:
        return {"seeds": self.seeds, "ece": self.ece, "mean_ece": self.mean_ece(),
                "models": self.models, "config": self.config}

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "report.json"]
        with open(written[0], "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        for mode, table in self.reliability.items():
            csv_p, svg_p = out / f"reliability_{mode}.csv", out / f"reliability_{mode}.svg"
            report.write_text(csv_p, report.reliability_csv(table))
            report.write_text(svg_p, report.reliability_svg(table, title=mode))
            written += [csv_p, svg_p]
        for mode, text in self.histograms.items():
            p = out / f"histograms_{mode}.csv"
            report.write_text(p, text)
            written.append(p)
        return written


def _cfg_dict(cfg: BenchConfig) -> dict:
    d = asdict(cfg)
    d["seeds"] = list(cfg.seeds)
    d["modes"] = list(cfg.modes)
    return d


def run_benchmark(cfg: BenchConfig = BenchConfig(), out_dir=None) -> BenchReport:
    """Fit on simulated validation scores and evaluate every mode on test.

    Reliability tables and histograms pool test predictions over all seeds.
    """
    S = cfg.sampling.rce_scale_max
    ece = {m: [] for m in cfg.modes}
    models = {m: [] for m in cfg.modes}
    pooled = {m: ([], []) for m in cfg.modes}
    rce_hist = ([], [], [])
    for seed in cfg.seeds:
        rng = np.random.default_rng(seed)
        val = draw_latents(rng, cfg.val_n, cfg)
        test = draw_latents(rng, cfg.test_n, cfg)
        if val[2].min() == val[2].max():
            raise ValidationError(f"seed {seed}: validation labels are all one class")
        scored = {}
        for smode in sorted({_SCORE_MODE[m] for m in cfg.modes}):
            srng = np.random.default_rng([seed, list(_SCORE_MODE.values()).index(smode)])
            v = simulate_batch(srng, val[0], val[2], val[3], cfg, smode)
            t = simulate_batch(srng, test[0], test[2], test[3], cfg, smode)
            scored[smode] = (v, t)
        fitted = {}

        def fit(smode, cmode):
            key = (smode, cmode)
            if key not in fitted:
                (vc, vr), _ = scored[smode]
                fitted[key] = fit_calibration(np.c_[vc, vr, val[2]], cfg.m, cfg.w_grid_step,
                                              cmode, S, confidence=cfg.confidence)
            return fitted[key]

        for mode in cfg.modes:
            smode = _SCORE_MODE[mode]
            tc, tr = scored[smode][1]
            if mode in ("full", "no_context", "no_analysis"):
                model = fit(smode, "full")
                psi = assign_confidences(model, tc, tr)
            elif mode == "rce_only":
                model = fit(smode, "rce-only")
                psi = assign_confidences(model, tc, tr)
            elif mode == "uniform_combined":
                model = fit(smode, "full")
                psi = transform_scores(tc, tr, model.w, S)
            else:
                model = None
                psi = normalize_rce(tr, S)
            ece[mode].append(compute_ece(np.c_[psi, test[2]], cfg.M).ece)
            models[mode].append(model.to_dict() if model is not None else None)
            pooled[mode][0].append(psi)
            pooled[mode][1].append(test[2])
        if "full" in scored:
            tc, tr = scored["full"][1]
            rce_hist[0].append(normalize_rce(tr, S))
            rce_hist[1].append(test[2])
            rce_hist[2].append(tc >= 0.5)

    rep = BenchReport(_cfg_dict(cfg), list(cfg.seeds), ece, models)
    for mode, (ps, ls) in pooled.items():
        psi, lab = np.concatenate(ps), np.concatenate(ls)
        rep.reliability[mode] = reliability_report(np.c_[psi, lab], cfg.M, cfg.band_level)
        rep.histograms[mode] = report.histogram_csv(psi, lab, cfg.hist_bins)
    if rce_hist[0]:
        s, lab, high = (np.concatenate(x) for x in rce_hist)
        rep.histograms["rce_low_coe"] = report.histogram_csv(s[~high], lab[~high], cfg.hist_bins)
        rep.histograms["rce_high_coe"] = report.histogram_csv(s[high], lab[high], cfg.hist_bins)
    if out_dir is not None:
        rep.write(out_dir)
    return rep
