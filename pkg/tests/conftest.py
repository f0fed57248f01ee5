import json

import pytest

from rcacalib.corpus import Corpus, Incident


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
    return path


@pytest.fixture
def small_corpus():
    return Corpus([
        Incident(f"inc-{i}", f"storage latency spike number {i}", f"disk full on node {i}")
        for i in range(10)
    ])


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = test_acceptance.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
