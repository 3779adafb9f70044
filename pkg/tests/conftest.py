import numpy as np
import pytest

from nrmhd.spectral import Grid, SpectralField, VectorField


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def grid2():
    return Grid(2, 32)


def single_mode(grid, m, amplitude=1.0):
    """Real field ``2 a cos(k.x)`` built from the conjugate pair at +/- m."""
    coeffs = np.zeros(grid.shape, dtype=complex)
    idx = tuple(mi % grid.n for mi in m)
    neg = tuple((-mi) % grid.n for mi in m)
    coeffs[idx] += amplitude
    coeffs[neg] += np.conj(amplitude)
    return SpectralField(grid, coeffs)


def shear_mode(grid, m, amplitude=1.0):
    """Divergence-free vector field from a single conjugate pair (2D/3D)."""
    m = np.asarray(m, dtype=float)
    e = np.zeros(grid.d)
    e[int(np.argmin(np.abs(m)))] = 1.0
    t = e - m * (m @ e) / (m @ m)
    t /= np.linalg.norm(t)
    f = single_mode(grid, tuple(int(x) for x in m), amplitude)
    return VectorField(grid, np.stack([ti * f.coeffs for ti in t]), divergence_free=True)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
