import os
from pathlib import Path

import numpy as np
import pytest

from nnim.graph import LabeledGraph

ROOT = Path(__file__).resolve().parents[1]


def facebook_dir() -> Path | None:
    """Directory holding the SNAP ego files for ego 107, if present."""
    for cand in (os.environ.get("NNIM_FACEBOOK_DIR"), ROOT / "data" / "facebook"):
        if cand and (Path(cand) / "107.edges").exists():
            return Path(cand)
    return None


def make_graph(n, edges, labels=None, d=2, directed=True):
    if labels is None:
        labels = np.zeros((n, d), dtype=np.uint8)
    return LabeledGraph.from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2),
                                   np.asarray(labels, dtype=np.uint8), directed=directed)


def random_digraph(rng, n, density=0.3, d=3):
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    edges = np.argwhere(mask)
    labels = (rng.random((n, d)) < 0.4).astype(np.uint8)
    return LabeledGraph.from_edges(n, edges, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS: list[str] = []


@pytest.fixture
def criterion():
    """Print one PASS/FAIL line for an acceptance criterion and assert it."""
    def check(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        print(line)
        _VERDICTS.append(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
