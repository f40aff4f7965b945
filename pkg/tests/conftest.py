import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("gridsense", max_examples=40, deadline=None)
settings.load_profile("gridsense")


def naive_dft(x):
    """Direct O(N^2) DFT summation, independent of the package FFT."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
