import numpy as np
import pytest

from lsmetric import KroneckerStructure, ParamVector, build_state_space, sample_stable

STRUCTURES = [(1,), (2,), (1, 1), (2, 1)]

ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def sc1_theta():
    return ParamVector(KroneckerStructure([1]), [0.5, 1.0])


@pytest.fixture
def sc1(sc1_theta):
    return build_state_space(sc1_theta)


@pytest.fixture
def fir_theta():
    return ParamVector(KroneckerStructure([1]), [0.0, 1.0])


@pytest.fixture
def fir(fir_theta):
    return build_state_space(fir_theta)


def sampled_thetas(count, rho_max=0.9, offset=0):
    """``count`` seeded stable parameter vectors cycling through STRUCTURES."""
    return [
        sample_stable(KroneckerStructure(STRUCTURES[i % len(STRUCTURES)]), offset + i, rho_max)
        for i in range(count)
    ]


def central_difference(f, x, h=1e-6):
    """Central differences of ``f`` with respect to every entry of ``x``."""
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(out)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))
