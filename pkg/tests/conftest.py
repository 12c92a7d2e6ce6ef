import numpy as np
import pytest
from hypothesis import strategies as st

from rdplab.source import make_source


def hb(d):
    """Binary entropy in bits."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -d * np.log2(d) - (1 - d) * np.log2(1 - d)
    return np.where((d <= 0) | (d >= 1), 0.0, out)


@st.composite
def sources(draw, min_size=1, max_size=8, dim=1):
    m = draw(st.integers(min_size, max_size))
    pts = draw(st.lists(st.integers(-50, 50), min_size=m, max_size=m, unique=True))
    sym = np.array(pts, dtype=float)[:, None] / 10.0
    if dim > 1:
        sym = np.hstack([sym] + [sym * (k + 2) for k in range(dim - 1)])
    weights = draw(st.lists(st.floats(0.05, 1.0), min_size=m, max_size=m))
    return make_source(sym, weights)


@st.composite
def source_and_assignment(draw, min_size=1, max_size=8):
    src = draw(sources(min_size=min_size, max_size=max_size))
    n = draw(st.integers(1, src.size))
    a = draw(st.lists(st.integers(0, n - 1), min_size=src.size, max_size=src.size))
    return src, a


@pytest.fixture
def binary():
    return make_source([0, 1], [0.5, 0.5])


@pytest.fixture
def skewed():
    return make_source([0, 1], [0.3, 0.7])


@pytest.fixture
def uniform4():
    return make_source([0, 1, 2, 3], [0.25] * 4)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
