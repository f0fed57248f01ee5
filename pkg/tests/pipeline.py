"""Drive the CLI through every stage on a synthetic corpus."""

from rcacalib.cli import run

CONFIG = """\
[backend]
endpoint = simulated
seed = 7

[labels]
n_queries = 2
n_per_query = 16

[calibration]
m = 3
"""

STAGES = [
    ["ingest", "--synthetic", "50", "--seed", "3"],
    ["split"],
    ["retrieve"],
    ["score", "--mode", "full"],
    ["pseudo-label"],
    ["calibrate"],
    ["calibrate", "--ablation", "rce-only"],
    ["evaluate"],
    ["evaluate", "--ablation", "rce-only"],
    ["evaluate", "--baseline", "uniform"],
    ["evaluate", "--baseline", "uniform-rce-only"],
    ["report"],
]

REPORT_FILES = [f"{kind}_{name}.{ext}"
                for name in ("full", "rce-only", "uniform", "uniform-rce-only")
                for kind, ext in (("reliability", "csv"), ("reliability", "svg"),
                                  ("histograms", "csv"))] + ["report.json"]


def write_config(tmp_path, text=CONFIG):
    p = tmp_path / "config.ini"
    p.write_text(text)
    return p


def run_pipeline(tmp_path, out="out"):
    cfg = write_config(tmp_path)
    codes = []
    for stage in STAGES:
        codes.append(run(stage + ["--config", str(cfg), "--output-dir", str(tmp_path / out)]))
    return codes
