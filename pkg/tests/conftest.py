import numpy as np
import pytest
from hypothesis import settings

from adaptscan.common import PhantomKind
from adaptscan.phantom import PhantomSpec, make_case

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


@pytest.fixture(scope="session")
def knee_case():
    return make_case(PhantomSpec(PhantomKind.KNEE_STATIC, grid_size=64, seed=11))


@pytest.fixture(scope="session")
def cardiac_case():
    return make_case(PhantomSpec(PhantomKind.CARDIAC_TWO_PHASE, grid_size=64, seed=12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one line per criterion at the end of the run
_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
