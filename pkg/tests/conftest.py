import numpy as np
import pytest

from fracnorm.geometry import interval, ltriangle, square


@pytest.fixture(scope="session")
def unit_interval():
    return interval(8)


@pytest.fixture(scope="session")
def unit_square():
    return square(2)


@pytest.fixture(scope="session")
def right_triangle():
    return ltriangle(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()
N_CRITERIA = 11


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance check; a criterion passes if all its checks do."""
    results = request.config.stash[ACCEPTANCE]

    def record(n: int, ok: bool, detail: str = "") -> bool:
        prev_ok, prev_detail = results.get(n, (True, []))
        results[n] = (prev_ok and bool(ok), prev_detail + ([detail] if detail else []))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n not in results:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        ok, details = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
