import numpy as np
import pytest
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation


def random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()


def random_psd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n)) * scale
    return A @ A.T + 1e-6 * np.eye(n)


def vec3(lo=-3.0, hi=3.0):
    return st.lists(st.floats(lo, hi, allow_nan=False), min_size=3, max_size=3).map(np.array)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def assert_psd(P, tol=1e-10):
    assert np.allclose(P, P.T, atol=1e-12)
    w = np.linalg.eigvalsh(P)
    assert w.min() >= -tol * max(1.0, abs(w.max()))


VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and fail on any broken check."""
    def record(title, checks):
        ok = all(c for _, c in checks)
        line = f"{'PASS' if ok else 'FAIL'} {title}: " + "; ".join(text for text, _ in checks)
        VERDICTS.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
