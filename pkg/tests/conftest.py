import numpy as np
import pytest

from bpdl.core_space import TraitSpace, build_kernel_pair


@pytest.fixture
def ts2():
    return TraitSpace(2, [1.0, 1.0])


@pytest.fixture
def k2():
    return build_kernel_pair([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, title, detail = RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number:2d} {title}: {detail}")
