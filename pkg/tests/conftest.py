import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from twistkam.genfun import FamilySpec, make_family  # noqa: E402
from twistkam.twistmap import TwistMap  # noqa: E402


@pytest.fixture(scope="session")
def conj():
    return make_family(FamilySpec("conjugated_integrable", amplitude=0.3))


@pytest.fixture(scope="session")
def conj_map(conj):
    return TwistMap(conj)


@pytest.fixture(scope="session")
def integrable_map():
    return TwistMap(make_family(FamilySpec("integrable")))


@pytest.fixture(scope="session")
def conj_graph(conj):
    from twistkam.variational import build_invariant_graph

    return build_invariant_graph(conj, 3, 1, grid_size=65)


@pytest.fixture(scope="session")
def conj_flat(conj_map, conj_graph):
    from twistkam.conjugacy import flat_structure, metric_field

    B, report = metric_field(conj_map, conj_graph)
    return B, report, flat_structure(B)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(criterion: int, ok: bool, detail: str):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
