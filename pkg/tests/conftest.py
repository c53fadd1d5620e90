import numpy as np
import pytest

from basinflow import grid, model


@pytest.fixture
def unit32():
    return grid.RectDomain(1.0, 1.0, 32, 32)


@pytest.fixture
def small():
    return grid.RectDomain(1.0, 1.0, 9, 9)


def smooth_field(d, seed=0, modes=5):
    """Random smooth field built from low sine modes (vanishes on the walls)."""
    rng = np.random.default_rng(seed)
    basis = grid.spectral_basis(d)
    c = np.zeros(d.shape)
    k, l = min(modes, d.nx), min(modes, d.ny)
    c[:k, :l] = rng.standard_normal((k, l))
    return basis.synthesize(c)


@pytest.fixture
def example2_small():
    d = grid.RectDomain(model.EXAMPLE2_L, model.EXAMPLE2_L, 9, 9)
    return model.example2(d)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict = {}


def record(n, ok, detail):
    ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
