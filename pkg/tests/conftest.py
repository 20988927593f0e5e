from __future__ import annotations

import numpy as np
import pytest

from gnnpath.corpus import Corpus, build_graph


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def chain_corpus() -> Corpus:
    # three-document chain d1 -> d2 -> d3 with overlapping keywords
    return Corpus.from_lists([["a", "b"], ["b", "c"], ["c", "d", "e"]], topic="toy")


@pytest.fixture
def chain_graph(chain_corpus):
    return build_graph(chain_corpus)


@pytest.fixture
def two_component_corpus() -> Corpus:
    return Corpus.from_lists(
        [["a", "b"], ["b", "c"], ["c", "d"], ["x", "y"], ["y", "z"]], topic="split"
    )


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
