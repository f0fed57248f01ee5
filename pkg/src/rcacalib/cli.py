"""``rcacalib`` command line: one subcommand per pipeline stage.

Every stage reads and writes plain files under ``--output-dir`` so an
interrupted run can be resumed stage by stage, and every invocation appends a
line to ``manifest.jsonl`` recording inputs, outputs, config hash and seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from . import report
from .calib import (CalibrationModel, assign_confidences, compute_ece, fit_calibration,
                    normalize_rce, reliability_report, transform_scores)
from .config import Config, load_config
from .corpus import Corpus, SplitSpec, ingest_incidents, split_corpus, write_incidents
from .errors import CalibError, ConfigurationError, ValidationError
from .gateway import HttpChatBackend, ResponseCache, SimulatedBackend
from .labels import (LabeledCase, fit_correctness_threshold, ingest_human_labels,
                     rate_similarity, read_pseudo_labels, write_pseudo_labels)
from .pace import MODES, QueryCase, ScoreCache, ScoreRecord, load_templates, score_cases
from .retrieval import (EmbeddingCache, HttpEmbedder, MockEmbedder, Retriever,
                        context_from_ids)
from .simbench import BenchConfig, generate_corpus, make_predictions, pipeline_script, run_benchmark

log = logging.getLogger("rcacalib")

SPLITS = ("validation", "test")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_jsonl(path: Path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Run:
    """Per-invocation state: config, output dir, lazily built backend, manifest."""

    def __init__(self, args, cfg: Config):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.output_dir or cfg.paths.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        cache_dir = cfg.paths.cache_dir
        self.cache_dir = Path(cache_dir) if cache_dir else self.out / "cache"
        self.inputs: list = []
        self.outputs: list = []
        self.seeds: dict = {"run": cfg.seed}
        self._backend = None

    def need(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"required input {p} not found (run the earlier stage first)")
        self.inputs.append(p)
        return p

    def made(self, path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    @property
    def backend(self):
        if self._backend is None:
            b = self.cfg.backend
            self.cfg.require_backend()
            cache = ResponseCache(self.cache_dir / "responses.jsonl")
            if b.simulated:
                self._backend = SimulatedBackend(pipeline_script(), b.seed, cache)
                self.seeds["backend"] = b.seed
            else:
                self._backend = HttpChatBackend(
                    b.endpoint, b.model_name, b.credential_env_var, b.max_in_flight,
                    b.max_attempts, b.backoff_base, b.backoff_cap, b.timeout, cache)
                # fail before the first request rather than halfway through a batch
                self._backend.check_credentials()
        return self._backend

    def embedder(self):
        e = self.cfg.embedder
        if e.endpoint == "mock":
            return MockEmbedder(e.dim)
        return HttpEmbedder(e.endpoint, e.model_name, e.dim, e.credential_env_var)

    def templates(self):
        return load_templates(self.cfg.paths.templates_dir)

    def corpus(self, name: str) -> Corpus:
        return ingest_incidents(self.need(self.out / f"{name}.jsonl"))

    def manifest(self, status: str, error: Optional[str] = None) -> None:
        entry = {
            "time": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "command": self.args.command,
            "argv": self.args.argv,
            "status": status,
            "config_hash": self.cfg.digest(),
            "seeds": self.seeds,
            "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in self.inputs
                       if p.is_file()],
            "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in self.outputs
                        if p.is_file()],
            "backend_calls": self._backend.calls if self._backend is not None else 0,
            "versions": {"rcacalib": _version(), "python": platform.python_version(),
                         "numpy": np.__version__},
        }
        if error:
            entry["error"] = error
        with open(self.out / "manifest.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_ingest(run: Run):
    a = run.args
    if a.synthetic is not None:
        seed = run.cfg.seed if a.seed is None else a.seed
        run.seeds["synthetic"] = seed
        corpus = generate_corpus(seed, a.synthetic, a.topics)
        preds = make_predictions(corpus, seed + 1, a.accuracy)
        _write_jsonl(run.made(run.out / "predictions.jsonl"),
                     [{"incident_id": c.incident.id, "predicted_root_cause": c.predicted_root_cause,
                       "predictor_id": c.predictor_id} for c in preds])
    else:
        src = a.input or run.cfg.paths.corpus
        if not src:
            raise ConfigurationError("no input corpus: pass --input or set paths.corpus")
        corpus = ingest_incidents(run.need(src))
    write_incidents(corpus, run.made(run.out / "corpus.jsonl"))
    print(f"ingested {len(corpus)} incidents")


def cmd_split(run: Run):
    a, s = run.args, run.cfg.split
    corpus = run.corpus("corpus")
    sizes = [a.retrieval_n if a.retrieval_n is not None else s.retrieval_n,
             a.validation_n if a.validation_n is not None else s.validation_n,
             a.test_n if a.test_n is not None else s.test_n]
    if not any(sizes):
        n = len(corpus)
        sizes = [n - 2 * (n // 4), n // 4, n // 4]
    seed = run.cfg.seed if a.seed is None else a.seed
    run.seeds["split"] = seed
    parts = split_corpus(corpus, SplitSpec(*sizes, seed=seed))
    for name, part in zip(("retrieval",) + SPLITS, parts):
        write_incidents(part, run.made(run.out / f"{name}.jsonl"))
    print("split sizes: " + ", ".join(f"{n}={len(p)}" for n, p in
                                      zip(("retrieval",) + SPLITS, parts)))


def _splits(arg) -> tuple:
    return SPLITS if arg in (None, "all") else (arg,)


def cmd_retrieve(run: Run):
    L = run.args.budget if run.args.budget is not None else run.cfg.budgets_L
    retriever = Retriever(run.corpus("retrieval"), run.embedder(), L,
                          EmbeddingCache(run.cache_dir / "embeddings.jsonl"))
    for split in _splits(run.args.split):
        rows = []
        for inc in run.corpus(split):
            ctx = retriever.retrieve(inc)
            rows.append({"query_id": inc.id, "reference_ids": [r.id for r in ctx.references],
                         "total_tokens": ctx.total_tokens, "budget_L": ctx.budget_L})
        _write_jsonl(run.made(run.out / f"contexts_{split}.jsonl"), rows)
        print(f"{split}: retrieved context for {len(rows)} incidents (L={L})")


def _cases(run: Run, split: str) -> list:
    incidents = run.corpus(split).by_id()
    path = run.args.predictions or run.out / "predictions.jsonl"
    cases = []
    for row in _read_jsonl(run.need(path)):
        inc = incidents.get(row["incident_id"])
        if inc is not None:
            cases.append(QueryCase(inc, row["predicted_root_cause"], row.get("predictor_id", "")))
    if not cases:
        raise ValidationError(f"no predictions match the {split} split")
    return cases


def cmd_score(run: Run):
    mode = run.args.mode
    retrieval = run.corpus("retrieval")
    cache = ScoreCache(run.cache_dir / "scores.jsonl")
    templates = run.templates()
    for split in _splits(run.args.split):
        cases = _cases(run, split)
        ctx_rows = {r["query_id"]: r for r in
                    _read_jsonl(run.need(run.out / f"contexts_{split}.jsonl"))}
        contexts = []
        for c in cases:
            row = ctx_rows.get(c.incident.id)
            if row is None:
                raise ValidationError(f"no retrieved context for {c.incident.id}")
            contexts.append(context_from_ids(c.incident.id, row["reference_ids"], retrieval,
                                             row["budget_L"]))
        recs = score_cases(cases, contexts, run.cfg.sampling, run.backend, mode, cache,
                           templates, run.cfg.backend.max_workers)
        _write_jsonl(run.made(run.out / f"scores_{split}_{mode}.jsonl"),
                     [r.to_dict() for r in recs])
        print(f"{split}: scored {len(recs)} cases in {mode} mode")


def _rating_rows(run: Run, split: str) -> list:
    cfg = run.cfg.labels
    templates = run.templates()
    rows = []
    for c in _cases(run, split):
        if not c.incident.root_cause:
            raise ValidationError(f"incident {c.incident.id} has no confirmed root cause")
        r = rate_similarity(c.incident.root_cause, c.predicted_root_cause, run.backend,
                            cfg.n_queries, cfg.n_per_query, c.case_id, templates["SIMILARITY"],
                            run.cfg.sampling.temperature, run.cfg.sampling.score_max_tokens)
        rows.append({"case_id": r.case_id, "mean_rating": r.mean_rating,
                     "n_ratings": len(r.ratings), "dropped": r.dropped})
    return rows


def _threshold(run: Run) -> float:
    if run.args.threshold is not None:
        return run.args.threshold
    p = run.out / "threshold.json"
    if p.exists():
        run.inputs.append(p)
        with open(p, encoding="utf-8") as fh:
            return float(json.load(fh)["threshold"])
    return run.cfg.labels.threshold


def cmd_pseudo_label(run: Run):
    threshold = _threshold(run)
    for split in _splits(run.args.split):
        rows = _rating_rows(run, split)
        _write_jsonl(run.made(run.out / f"ratings_{split}.jsonl"), rows)
        labels = [LabeledCase(r["case_id"], int(r["mean_rating"] >= threshold), "pseudo",
                              r["mean_rating"]) for r in rows]
        write_pseudo_labels(labels, run.made(run.out / f"labels_{split}.jsonl"))
        pos = sum(l.label for l in labels)
        print(f"{split}: {pos}/{len(labels)} labelled correct at threshold {threshold:g}")


def cmd_fit_threshold(run: Run):
    humans = {h.case_id: h for h in ingest_human_labels(run.need(run.args.human))}
    positive_min = run.cfg.labels.human_positive_min
    means = {}
    for split in SPLITS:
        p = run.out / f"ratings_{split}.jsonl"
        if p.exists():
            run.inputs.append(p)
            means.update({r["case_id"]: r["mean_rating"] for r in _read_jsonl(p)})
    pairs = [(means[cid], int(h.score >= positive_min)) for cid, h in sorted(humans.items())
             if cid in means and not h.flagged]
    if not pairs:
        raise ValidationError("no human-labelled case has a similarity rating")
    t, f1 = fit_correctness_threshold(pairs)
    _write_json(run.made(run.out / "threshold.json"),
                {"threshold": t, "f1": f1, "n": len(pairs)})
    print(f"threshold {t:g} (F1 {f1:.4f} on {len(pairs)} cases)")


def _scored(run: Run, split: str, mode: str):
    recs = [ScoreRecord.from_dict(r) for r in
            _read_jsonl(run.need(run.out / f"scores_{split}_{mode}.jsonl"))]
    labels = {l.case_id: l.label for l in
              read_pseudo_labels(run.need(run.out / f"labels_{split}.jsonl"))}
    recs = [r for r in recs if r.case_id in labels]
    if not recs:
        raise ValidationError(f"no labelled {split} cases scored in {mode} mode")
    coe = np.array([r.coe_mean for r in recs])
    rce = np.array([r.rce_mean for r in recs])
    lab = np.array([labels[r.case_id] for r in recs])
    return recs, coe, rce, lab


def _model_name(ablation: str, mode: str) -> str:
    return ablation if mode == "full" else f"{ablation}_{mode}"


def cmd_calibrate(run: Run):
    a, c = run.args, run.cfg.calibration
    _, coe, rce, lab = _scored(run, "validation", a.mode)
    ablation = "full" if a.ablation == "full" else "rce-only"
    model = fit_calibration(np.c_[coe, rce, lab], c.m, c.w_grid_step, ablation,
                            run.cfg.sampling.rce_scale_max, confidence=c.confidence)
    path = run.made(run.out / f"model_{_model_name(a.ablation, a.mode)}.json")
    model.save(path)
    print(f"fitted w={model.w:.2f}, thresholds {[round(t, 4) for t in model.thresholds]}")


def cmd_evaluate(run: Run):
    a, c = run.args, run.cfg.calibration
    S = run.cfg.sampling.rce_scale_max
    recs, coe, rce, lab = _scored(run, "test", a.mode)
    if a.baseline == "uniform-rce-only":
        name = a.baseline
        psi = normalize_rce(rce, S)
    else:
        mname = _model_name("full" if a.baseline == "uniform" else a.ablation, a.mode)
        model = CalibrationModel.load(run.need(run.out / f"model_{mname}.json"))
        if a.baseline == "uniform":
            name = a.baseline if a.mode == "full" else f"uniform_{a.mode}"
            psi = transform_scores(coe, rce, model.w, S)
        else:
            name = mname
            psi = assign_confidences(model, coe, rce)
    pairs = np.c_[psi, lab]
    ece = compute_ece(pairs, c.M)
    table = reliability_report(pairs, c.M, c.band_level)
    _write_jsonl(run.made(run.out / f"confidences_{name}.jsonl"),
                 [{"case_id": r.case_id, "psi": float(p), "label": int(l)}
                  for r, p, l in zip(recs, psi, lab)])
    _write_json(run.made(run.out / f"evaluation_{name}.json"),
                {"name": name, "ece": ece.ece, "M": c.M, "n": ece.n,
                 "band_level": c.band_level,
                 "table": [{"bin_lo": r.lo, "bin_hi": r.hi, "count": r.count,
                            "mean_conf": r.mean_conf, "accuracy": r.accuracy,
                            "band_lo": r.band_lo, "band_hi": r.band_hi} for r in table.rows]})
    print(f"{name}: ECE {ece.ece:.4f} on {ece.n} test cases")


def cmd_report(run: Run):
    evals = sorted(run.out.glob("evaluation_*.json"))
    if not evals:
        raise ValidationError("nothing to report: run evaluate first")
    bins = run.args.hist_bins
    summary = {}
    for p in evals:
        run.inputs.append(p)
        with open(p, encoding="utf-8") as fh:
            name = json.load(fh)["name"]
        rows = _read_jsonl(run.need(run.out / f"confidences_{name}.jsonl"))
        pairs = np.array([[r["psi"], r["label"]] for r in rows], dtype=float)
        table = reliability_report(pairs, run.cfg.calibration.M, run.cfg.calibration.band_level)
        ece = compute_ece(pairs, run.cfg.calibration.M)
        summary[name] = {"ece": ece.ece, "n": ece.n}
        report.write_text(run.made(run.out / f"reliability_{name}.csv"),
                          report.reliability_csv(table))
        report.write_text(run.made(run.out / f"reliability_{name}.svg"),
                          report.reliability_svg(table, title=name))
        report.write_text(run.made(run.out / f"histograms_{name}.csv"),
                          report.histogram_csv(pairs[:, 0], pairs[:, 1].astype(int), bins))
    _write_json(run.made(run.out / "report.json"), {"ece": summary})
    width = max(len(n) for n in summary)
    for name, v in summary.items():
        print(f"{name:<{width}}  ECE {v['ece']:.4f}  n={v['n']}")


def cmd_simbench(run: Run):
    sampling = run.cfg.sampling
    bc = BenchConfig.from_section(run.cfg.simbench, sampling)
    if run.args.seed:
        bc = dataclasses.replace(bc, seeds=tuple(run.args.seed))
    run.seeds["simbench"] = list(bc.seeds)
    out = run.out / "simbench"
    rep = run_benchmark(bc, out)
    for p in sorted(out.iterdir()):
        run.made(p)
    for mode, v in rep.mean_ece().items():
        print(f"{mode:<17} mean ECE {v:.4f}")


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "retrieve": cmd_retrieve,
    "score": cmd_score,
    "pseudo-label": cmd_pseudo_label,
    "fit-threshold": cmd_fit_threshold,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "simbench": cmd_simbench,
}
# stages that never talk to the chat backend can run without backend.endpoint
_NO_BACKEND = {"ingest", "split", "retrieve", "fit-threshold", "calibrate", "evaluate",
               "report", "simbench"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--output-dir", help="directory for all stage outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rcacalib", parents=[common],
                                description="Confidence calibration for LLM root-cause analysis.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("ingest", parents=[common], help="validate and copy an incident corpus")
    s.add_argument("--input", help="incident JSON-Lines file")
    s.add_argument("--synthetic", type=int, metavar="N",
                   help="generate N synthetic incidents and predictions instead")
    s.add_argument("--topics", type=int, default=8)
    s.add_argument("--accuracy", type=float, default=0.4,
                   help="share of synthetic predictions that are correct")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("split", parents=[common], help="seeded retrieval/validation/test split")
    s.add_argument("--retrieval-n", type=int)
    s.add_argument("--validation-n", type=int)
    s.add_argument("--test-n", type=int)
    s.add_argument("--seed", type=int)

    split_choices = SPLITS + ("all",)
    s = sub.add_parser("retrieve", parents=[common], help="build budgeted reference contexts")
    s.add_argument("--split", choices=split_choices, default="all")
    s.add_argument("--budget", type=int, help="token budget L")

    s = sub.add_parser("score", parents=[common], help="COE and RCE scoring")
    s.add_argument("--mode", choices=MODES, default="full")
    s.add_argument("--split", choices=split_choices, default="all")
    s.add_argument("--predictions", help="predictions JSON-Lines file")

    s = sub.add_parser("pseudo-label", parents=[common], help="similarity-based labels")
    s.add_argument("--split", choices=split_choices, default="all")
    s.add_argument("--predictions")
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("fit-threshold", parents=[common],
                       help="F1-optimal pseudo-label threshold from human labels")
    s.add_argument("--human", required=True, help="human annotation JSON-Lines file")

    s = sub.add_parser("calibrate", parents=[common], help="fit w and bin thresholds")
    s.add_argument("--ablation", choices=("full", "rce-only"), default="full")
    s.add_argument("--mode", choices=MODES, default="full", help="which scores to fit on")

    s = sub.add_parser("evaluate", parents=[common], help="test-set ECE")
    s.add_argument("--baseline", choices=("uniform", "uniform-rce-only"))
    s.add_argument("--ablation", choices=("full", "rce-only"), default="full")
    s.add_argument("--mode", choices=MODES, default="full")

    s = sub.add_parser("report", parents=[common], help="reliability tables and histograms")
    s.add_argument("--hist-bins", type=int, default=10)

    s = sub.add_parser("simbench", parents=[common], help="simulated benchmark")
    s.add_argument("--seed", type=int, action="append", help="repeatable")
    return p


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    state = None
    try:
        need_backend = args.command not in _NO_BACKEND
        cfg = load_config(args.config, need_backend) if args.config else Config()
        if need_backend:
            cfg.require_backend()
        state = Run(args, cfg)
        COMMANDS[args.command](state)
    except (CalibError, OSError, KeyError, json.JSONDecodeError) as exc:
        msg = f"{type(exc).__name__}: {exc}"
        print(f"rcacalib {args.command}: error: {msg}", file=sys.stderr)
        if state is not None:
            state.manifest("error", msg)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure is an operational error
        log.debug("unhandled error", exc_info=True)
        msg = f"{type(exc).__name__}: {exc}"
        print(f"rcacalib {args.command}: unexpected error: {msg}", file=sys.stderr)
        if state is not None:
            state.manifest("error", msg)
        return 1
    state.manifest("ok")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
