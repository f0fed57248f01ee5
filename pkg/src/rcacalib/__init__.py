"""Confidence estimation and calibration for LLM root-cause analysis."""

from .calib import (CalibrationModel, assign_confidence, assign_confidences, compute_ece,
                    fit_bins, fit_calibration, reliability_report, transform_score,
                    transform_scores, uniform_baseline, wilson_interval)
from .corpus import Corpus, Incident, SplitSpec, count_tokens, ingest_incidents, split_corpus
from .errors import (BackendError, CalibError, ConfigurationError, ParseError, TransportError,
                     ValidationError)
from .gateway import (CompletionRequest, HttpChatBackend, ResponseCache, SimulatedBackend,
                      complete, make_simulated_backend)
from .labels import fit_correctness_threshold, ingest_human_labels, label_cases, rate_similarity
from .pace import (QueryCase, SamplingConfig, ScoreRecord, estimate_coe, estimate_rce,
                   parse_coe_choice, parse_rce_score, score_case, score_cases)
from .retrieval import (MockEmbedder, RetrievedContext, Retriever, embed_text,
                        rank_by_similarity, select_under_budget)

__all__ = [
    "BackendError", "CalibError", "CalibrationModel", "CompletionRequest", "ConfigurationError",
    "Corpus", "HttpChatBackend", "Incident", "MockEmbedder", "ParseError", "QueryCase",
    "ResponseCache", "RetrievedContext", "Retriever", "SamplingConfig", "ScoreRecord",
    "SimulatedBackend", "SplitSpec", "TransportError", "ValidationError", "assign_confidence",
    "assign_confidences", "complete", "compute_ece", "count_tokens", "embed_text",
    "estimate_coe", "estimate_rce", "fit_bins", "fit_calibration", "fit_correctness_threshold",
    "ingest_human_labels", "ingest_incidents", "label_cases", "make_simulated_backend",
    "parse_coe_choice", "parse_rce_score", "rank_by_similarity", "rate_similarity",
    "reliability_report", "score_case", "score_cases", "select_under_budget", "split_corpus",
    "transform_score", "transform_scores", "uniform_baseline", "wilson_interval",
]

__version__ = "0.1.0"
