import json

from pipeline import REPORT_FILES, run_pipeline, write_config
from rcacalib.cli import run


def manifest(out):
    return [json.loads(l) for l in (out / "manifest.jsonl").read_text().splitlines()]


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(capsys):
    assert run(["score", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_full_pipeline(tmp_path):
    assert run_pipeline(tmp_path) == [0] * 12
    out = tmp_path / "out"
    for name in REPORT_FILES:
        assert (out / name).exists(), name
    model = json.loads((out / "model_rce-only.json").read_text())
    assert model["w"] == 0.0
    entries = manifest(out)
    assert len(entries) == 12 and all(e["status"] == "ok" for e in entries)
    # every output is traceable to a manifest entry carrying a config hash
    produced = {o["path"] for e in entries for o in e["outputs"] if e["config_hash"]}
    for name in REPORT_FILES:
        assert str(out / name) in produced


def test_rerun_score_is_free_and_identical(tmp_path):
    run_pipeline(tmp_path)
    out = tmp_path / "out"
    before = (out / "scores_validation_full.jsonl").read_bytes()
    cfg = str(tmp_path / "config.ini")
    assert run(["score", "--config", cfg, "--output-dir", str(out)]) == 0
    assert manifest(out)[-1]["backend_calls"] == 0
    assert (out / "scores_validation_full.jsonl").read_bytes() == before


def test_score_modes(tmp_path):
    run_pipeline(tmp_path)
    cfg, out = str(tmp_path / "config.ini"), str(tmp_path / "out")
    for mode in ("no-context", "no-analysis"):
        assert run(["score", "--mode", mode, "--config", cfg, "--output-dir", out]) == 0
        assert run(["calibrate", "--mode", mode, "--config", cfg, "--output-dir", out]) == 0
        assert run(["evaluate", "--mode", mode, "--config", cfg, "--output-dir", out]) == 0
    rec = json.loads((tmp_path / "out" / "scores_test_no-analysis.jsonl").read_text()
                     .splitlines()[0])
    assert rec["analyses"] == [] and len(rec["coe_votes"]) == 1


def test_fit_threshold(tmp_path):
    run_pipeline(tmp_path)
    out = tmp_path / "out"
    ratings = [json.loads(l) for l in (out / "ratings_validation.jsonl").read_text().splitlines()]
    human = tmp_path / "human.jsonl"
    human.write_text("".join(
        json.dumps({"case_id": r["case_id"], "score": 5 if r["mean_rating"] > 2 else 1}) + "\n"
        for r in ratings))
    cfg = str(tmp_path / "config.ini")
    assert run(["fit-threshold", "--human", str(human), "--config", cfg,
                "--output-dir", str(out)]) == 0
    t = json.loads((out / "threshold.json").read_text())
    assert t["f1"] == 1.0


def test_missing_credential_fails_fast(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("RCACALIB_ABSENT_KEY", raising=False)
    run_pipeline(tmp_path)
    cfg = write_config(tmp_path, "[backend]\nendpoint = http://127.0.0.1:9/v1\n"
                                 "credential_env_var = RCACALIB_ABSENT_KEY\n")
    code = run(["score", "--mode", "no-context", "--config", str(cfg),
                "--output-dir", str(tmp_path / "out")])
    assert code == 1
    err = capsys.readouterr().err
    assert "RCACALIB_ABSENT_KEY" in err and "ConfigurationError" in err
    assert manifest(tmp_path / "out")[-1]["status"] == "error"


def test_missing_endpoint(tmp_path, capsys):
    cfg = write_config(tmp_path, "[budgets]\nL = 10\n")
    assert run(["score", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 1
    assert "backend.endpoint" in capsys.readouterr().err


def test_missing_stage_input(tmp_path, capsys):
    assert run(["calibrate", "--output-dir", str(tmp_path)]) == 1
    assert "run the earlier stage" in capsys.readouterr().err


def test_simbench_subcommand(tmp_path):
    cfg = write_config(tmp_path, "[simbench]\nval_n = 300\ntest_n = 300\n")
    assert run(["simbench", "--seed", "42", "--config", str(cfg),
                "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "simbench" / "report.json").exists()
    assert (tmp_path / "simbench" / "reliability_full.svg").exists()
    assert manifest(tmp_path)[-1]["seeds"]["simbench"] == [42]
