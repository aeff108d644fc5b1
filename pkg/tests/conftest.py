import numpy as np
import pytest

from capa.core import center


def random_data(seed, F=10, T=200, K=3, sequence=False):
    """Low-rank signal plus noise with class-shifted means."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, K, T)
    labels[:K] = np.arange(K)
    raw = (rng.standard_normal((F, 3)) @ rng.standard_normal((3, T))
           + 0.5 * rng.standard_normal((F, T)) + 2.0 * np.eye(F)[:, labels % F])
    if sequence:
        raw = np.cumsum(raw, axis=1) * 0.1 + raw
    return center(raw, labels=labels, is_sequence=sequence)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """``criterion(k)(ok, detail)`` records a result and asserts it."""
    def bind(k):
        def record(ok, detail):
            ACCEPTANCE[k] = (bool(ok), detail)
            assert ok, f"criterion {k}: {detail}"
        return record
    return bind


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
