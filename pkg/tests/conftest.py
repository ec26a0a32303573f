import numpy as np
import pytest

from logitconf import _backend


@pytest.fixture(params=_backend.available())
def backend(request):
    with _backend.use_backend(request.param) as kern:
        yield kern


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_gaussians(rng, c_lo=2, c_hi=20):
    """Instance distribution used by the bound/consistency checks."""
    from logitconf.core import ClassGaussians

    c = int(rng.integers(c_lo, c_hi + 1))
    means = rng.uniform(-5, 5, c)
    stds = np.exp(rng.uniform(np.log(0.05), np.log(5), c))
    return ClassGaussians(means, stds)


# (number, title, passed, detail) per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
