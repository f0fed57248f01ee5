import dataclasses
import filecmp
import math

import numpy as np
import pytest

from rcacalib.errors import ValidationError
from rcacalib.pace import SamplingConfig
from rcacalib.retrieval import MockEmbedder
from rcacalib.simbench import (ALL_MODES, BenchConfig, LatentCase, draw_latents, generate_corpus,
                               latent_case, run_benchmark, simulate_batch, simulate_scores)

SMALL = BenchConfig(val_n=400, test_n=600, seeds=(42,))


def test_generate_corpus_contract():
    c = generate_corpus(1, 10)
    assert len(c) == 10 and len({i.id for i in c}) == 10
    assert generate_corpus(1, 10) == c
    stems = {i.description.split(":")[0] for i in generate_corpus(2, 20, topics=1)}
    assert len(stems) == 1
    with pytest.raises(ValidationError):
        generate_corpus(0, 5, topics=0)


def test_same_topic_embeds_closer():
    c = list(generate_corpus(3, 60, topics=4))
    emb = MockEmbedder()
    same, diff = [], []
    for i in range(len(c)):
        for j in range(i + 1, len(c)):
            s = emb.embed(c[i].description) @ emb.embed(c[j].description)
            (same if c[i].service == c[j].service else diff).append(s)
    assert np.mean(same) > np.mean(diff)


def test_latent_limits():
    cfg = BenchConfig()
    assert latent_case(1e6, 1, 0.5, cfg).p_correct == 1.0
    case = latent_case(0.0, 1, 1.0, cfg)
    rec, label = simulate_scores(dataclasses.replace(case, coe_rate=1.0), SamplingConfig(), 5)
    assert rec.coe_mean == 1.0 and label == 1
    assert math.isclose(sum(case.rce_dist), 1.0)
    with pytest.raises(ValidationError):
        LatentCase(0, 0.5, 1, 0.5, (0.5, 0.4))


def test_simulate_scores_deterministic():
    case = latent_case(0.3, 1, 0.4, BenchConfig(), case_id="x")
    assert simulate_scores(case, SamplingConfig(), 9) == simulate_scores(case, SamplingConfig(), 9)


def test_rce_shifts_up_for_correct_high_quality():
    cfg = BenchConfig()
    ks = np.arange(1, 6)
    good = np.dot(ks, latent_case(1.5, 1, 0.9, cfg).rce_dist)
    bad = np.dot(ks, latent_case(-1.5, 0, 0.9, cfg).rce_dist)
    assert good > bad
    # low evidence widens the distribution
    var = lambda d: np.dot((ks - np.dot(ks, d)) ** 2, d)
    assert var(latent_case(0, 1, 0.05, cfg).rce_dist) > var(latent_case(0, 1, 0.95, cfg).rce_dist)


def test_label_consistency_at_fixed_quality():
    cfg = BenchConfig()
    rng = np.random.default_rng(0)
    q = 0.7
    p = 1 / (1 + math.exp(-cfg.alpha * (q - cfg.q0)))
    labels = rng.random(10_000) < p
    assert abs(labels.mean() - latent_case(q, 1, 0.5, cfg).p_correct) <= 0.03


def test_batch_matches_per_case_distribution():
    cfg = BenchConfig()
    rng = np.random.default_rng(1)
    q, p, y, e = draw_latents(rng, 3000, cfg)
    coe, rce = simulate_batch(np.random.default_rng(2), q, y, e, cfg)
    per_case = [simulate_scores(latent_case(q[i], y[i], e[i], cfg), cfg.sampling, i)[0]
                for i in range(300)]
    assert np.mean([r.coe_mean for r in per_case]) == pytest.approx(coe[:300].mean(), abs=0.04)
    assert np.mean([r.rce_mean for r in per_case]) == pytest.approx(rce[:300].mean(), abs=0.1)


def test_report_structure(tmp_path):
    rep = run_benchmark(SMALL, tmp_path)
    assert set(rep.ece) == set(ALL_MODES)
    assert all(np.isfinite(v[0]) for v in rep.ece.values())
    for mode in ALL_MODES:
        for name in (f"reliability_{mode}.csv", f"reliability_{mode}.svg",
                     f"histograms_{mode}.csv"):
            assert (tmp_path / name).exists()
    assert rep.models["rce_only"][0]["w"] == 0.0


def test_seed_42_ordering():
    rep = run_benchmark(BenchConfig(seeds=(42,)))
    e = {k: v[0] for k, v in rep.ece.items()}
    assert e["full"] <= e["uniform_combined"] and e["full"] <= e["rce_only"]


def test_byte_identical(tmp_path):
    run_benchmark(SMALL, tmp_path / "a")
    run_benchmark(SMALL, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only


def test_config_errors():
    with pytest.raises(ValidationError):
        BenchConfig(val_n=0)
    with pytest.raises(ValidationError):
        BenchConfig(modes=("full", "bogus"))
    with pytest.raises(ValidationError):
        run_benchmark(BenchConfig(val_n=5, test_n=5, q0=50.0))


def test_from_section():
    bc = BenchConfig.from_section({"alpha": "3", "val_n": "100", "seeds": "1, 2 3",
                                   "modes": "full rce-only"})
    assert (bc.alpha, bc.val_n, bc.seeds, bc.modes) == (3.0, 100, (1, 2, 3), ("full", "rce_only"))
    with pytest.raises(ValidationError):
        BenchConfig.from_section({"nope": "1"})
