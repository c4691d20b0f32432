import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vemstokes.mesh import Cell, generate_quad_grid, generate_triangle_grid, generate_voronoi

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def _cell(xy):
    return Cell(tuple(range(len(xy))), np.asarray(xy, dtype=float))


@pytest.fixture(scope="session")
def voronoi16():
    return generate_voronoi(16)


@pytest.fixture(scope="session")
def sample_cells(voronoi16):
    """One cell of every shape the tests care about."""
    return {
        "square": generate_quad_grid(1).cells[0],
        "triangle": generate_triangle_grid(1).cells[0],
        "voronoi": voronoi16.cells[5],
        # non-convex but star-shaped (an arrow head)
        "nonconvex": _cell([[0, 0], [1, 0], [1, 1], [0.5, 0.4], [0, 1]]),
        "pentagon": _cell([[np.cos(t), np.sin(t)] for t in np.linspace(0, 2 * np.pi, 6)[:-1]]),
    }


def make_cell(xy):
    return _cell(xy)


# ------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Records (ok, detail) per criterion; summarised at the end of the run."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        entries = _ACCEPTANCE[n]
        bad = [d for ok, d in entries if not ok]
        status = "PASS" if not bad else "FAIL"
        tr.write_line(f"criterion {n}: {status} ({len(entries) - len(bad)}/{len(entries)} checks)")
        for d in bad:
            tr.write_line(f"    failed: {d}")
