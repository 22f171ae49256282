import numpy as np
import pytest

from spdelab.noise import LevyMeasureSpec, QWienerSpec
from spdelab.solver import linear_coefficients
from spdelab.spectral import SpectralSpace


@pytest.fixture
def heat():
    return SpectralSpace.heat_dirichlet(32)


@pytest.fixture
def heat_noise():
    k = np.arange(1, 33, dtype=float)
    return QWienerSpec(1.0 / k**2), LevyMeasureSpec.single([1.0], 1.0)


@pytest.fixture
def scalar_model():
    """dX = aX dt + bX dW + X dN~ with mark c, mass m: (a, b, lambda, c, m) = (-1, 0.5, 1, 0.3, 2)."""
    space = SpectralSpace.constant(1, 0.0)
    q = QWienerSpec([1.0])
    levy = LevyMeasureSpec.single([0.3], 2.0)
    coeffs = linear_coefficients(1, q, levy, a=-1.0, G=0.5, c=1.0)
    return space, q, levy, coeffs


def smooth_x0(dim=32):
    k = np.arange(1, dim + 1, dtype=float)
    return np.sin(np.pi * k / (dim + 1)) / k**2


ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert."""

    def record(number, title, checks, elapsed, limit, detail=""):
        checks = dict(checks)
        if limit is not None:
            checks[f"runtime {elapsed:.2f}s < {limit:g}s"] = elapsed < limit
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} [{elapsed:.2f}s]"
        if detail:
            line += f" {detail}"
        if failed:
            line += f" failed: {'; '.join(failed)}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
