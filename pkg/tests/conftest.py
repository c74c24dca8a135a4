import numpy as np
import pytest

from wsntopo.harness import generate_instance
from wsntopo.network import LITERAL, SUBTREE, NetworkSpec


def make_spec(positions, *, energy=1.0, eps_proc=50e-9, rho=1e-12, bits=(500, 1000),
              load_mode=LITERAL, active=None):
    return NetworkSpec(np.asarray(positions, dtype=float), energy, eps_proc, rho,
                       bits[0], bits[1], active=active, load_mode=load_mode)


def chain_spec(load_mode=SUBTREE):
    """Gateway plus three collinear sensors 100 m apart."""
    return make_spec([[0, 0], [100, 0], [200, 0], [300, 0]], bits=(100, 100), load_mode=load_mode)


@pytest.fixture
def spec5():
    return generate_instance(5, seed=0)


@pytest.fixture
def spec8():
    return generate_instance(8, seed=0)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, passed, detail)``."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
