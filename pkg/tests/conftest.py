import numpy as np
import pytest

from hmlab.domain import build_domain
from hmlab.minimizer import SolverParams, minimize
from hmlab.trace_norms import TraceFamily, make_trace


@pytest.fixture(scope="session")
def ball17():
    return build_domain("ball", 17)


@pytest.fixture(scope="session")
def ball33():
    return build_domain("ball", 33)


@pytest.fixture(scope="session")
def ball49():
    return build_domain("ball", 49)


@pytest.fixture(scope="session")
def ball65():
    return build_domain("ball", 65)


@pytest.fixture(scope="session")
def identity_min33(ball33):
    trace = make_trace(TraceFamily("identity"), ball33.surface)
    return minimize(ball33, trace, SolverParams())


@pytest.fixture(scope="session")
def identity_min49(ball49):
    trace = make_trace(TraceFamily("identity"), ball49.surface)
    return minimize(ball49, trace, SolverParams())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def identity_min65(ball65):
    trace = make_trace(TraceFamily("identity"), ball65.surface)
    return minimize(ball65, trace, SolverParams())


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        _ACCEPTANCE.append((number, line))
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
