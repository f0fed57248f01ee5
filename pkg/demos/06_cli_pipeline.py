"""
The command-line pipeline, end to end
======================================

Every stage reads and writes files in one output directory, so a run can be
resumed or repeated stage by stage. `endpoint = simulated` keeps this
offline; a real deployment points the endpoint at an OpenAI-style chat API
and names the environment variable holding the credential.
"""

import json
import pathlib
import tempfile

from rcacalib.cli import run

work = pathlib.Path(tempfile.mkdtemp(prefix="rcacalib-"))
cfg = work / "config.ini"
cfg.write_text("""\
[backend]
endpoint = simulated
seed = 7

[labels]
n_queries = 2
n_per_query = 16

[calibration]
m = 3
""")

stages = [
    ["ingest", "--synthetic", "80", "--seed", "3"],
    ["split"],
    ["retrieve"],
    ["score", "--mode", "full"],
    ["pseudo-label"],
    ["calibrate"],
    ["evaluate"],
    ["evaluate", "--baseline", "uniform"],
    ["report"],
]
out = work / "out"
for stage in stages:
    code = run(stage + ["--config", str(cfg), "--output-dir", str(out)])
    print(f"{' '.join(stage):<32} exit {code}")

report = json.loads((out / "report.json").read_text())
print(json.dumps(report, indent=2)[:600])
print("outputs:", sorted(p.name for p in out.iterdir())[:12], "...")
