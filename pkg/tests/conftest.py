import numpy as np
import pytest
from hypothesis import strategies as st

from vaxsae.graph import from_edges


def random_graph(rng, n_max=12, p=None):
    n = int(rng.integers(1, n_max + 1))
    p = rng.uniform(0.05, 0.6) if p is None else p
    ids = [f"u{i}" for i in range(n)]
    edges = [(ids[i], ids[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    states = [f"s{i % 3}" for i in range(n)]
    return from_edges(ids, edges, states)


@st.composite
def graphs(draw, n_max=12):
    n = draw(st.integers(1, n_max))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    ids = [f"u{i}" for i in range(n)]
    return from_edges(ids, [(ids[i], ids[j]) for i, j in chosen], ["s"] * n)


@pytest.fixture
def path3():
    return from_edges(["A", "B", "C"], [("A", "B"), ("B", "C")], {"A": "s1", "B": "s1", "C": "s2"})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one result line per acceptance criterion, repeated in the terminal summary
_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
