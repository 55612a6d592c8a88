import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def full_grid(nx, ny, spacing=1.0, origin=(0.0, 0.0)):
    xx, yy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()]) * spacing + np.asarray(origin)


def brute_pairs(coords, kernel):
    """Double loop over all ordered pairs; the reference for neighbour search."""
    out = []
    for i in range(len(coords)):
        for j in range(len(coords)):
            w = kernel(coords[i] - coords[j])
            if w != 0:
                out.append((i, j, w))
    return out


# criterion number -> list of (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[key]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {key}: {status}  " + "; ".join(d for _, d in parts))
