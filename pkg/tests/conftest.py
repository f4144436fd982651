import time

import hypothesis
import numpy as np
import pytest

from slskit import plant as P
from slskit.sparsity import build_dT_localized

hypothesis.settings.register_profile("ci", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=8, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture(scope="session")
def chain3():
    return P.load_fixture("chain3_swing")


@pytest.fixture(scope="session")
def chain6():
    return P.build_chain(6, coupling=0.3)


@pytest.fixture(scope="session")
def mesh3():
    return P.swing_mesh(3, seed=0)


@pytest.fixture
def rng():
    return P.philox(1234)


def dT(plant, d, T, h=np.inf):
    return build_dT_localized(plant.A, plant.B2, d, T, h)


ACCEPTANCE = pytest.StashKey[dict]()


class _Criterion:
    """Times one acceptance criterion and records a pass/fail line for the summary."""

    def __init__(self, log: dict, number: int, title: str, limit_s: float):
        self.log, self.number, self.title, self.limit_s = log, number, title, limit_s
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        ok = exc_type is None and elapsed < self.limit_s
        if exc_type is None and not ok:
            self.notes.append(f"over the {self.limit_s:g} s budget")
        elif exc_type is not None:
            first = str(exc).splitlines()[0] if str(exc) else ""
            self.notes.append(f"{exc_type.__name__}: {first}")
        detail = f" ({'; '.join(self.notes)})" if self.notes else ""
        verdict = "PASS" if ok else "FAIL"
        self.log[self.number] = (f"criterion {self.number:2d} {verdict} [{elapsed:7.2f} s] "
                                 f"{self.title}{detail}")
        if exc_type is None and not ok:
            raise AssertionError(f"criterion {self.number} took {elapsed:.2f} s "
                                 f"(budget {self.limit_s:g} s)")
        return False


@pytest.fixture
def criterion(request):
    log = request.config.stash.setdefault(ACCEPTANCE, {})
    return lambda number, title, limit_s: _Criterion(log, number, title, limit_s)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE, {})
    if log:
        terminalreporter.section("acceptance criteria")
        for n in sorted(log):
            terminalreporter.write_line(log[n])
