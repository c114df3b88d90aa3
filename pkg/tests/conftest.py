import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from parallel_metrics.expr import parse  # noqa: E402
from parallel_metrics.geometry import Chart  # noqa: E402

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

EXAMPLE_ROWS = [["1"], ["0", "exp(2*x)"], ["0", "0", "1"], ["0", "0", "0", "exp(2*u)"]]


def make_chart(coords, rows, box=None, grid_res=5, constraints=(), xi1=None, xi2=None, name="C"):
    n = len(coords)
    box = ((-1.0, 1.0),) * n if box is None else tuple(tuple(map(float, b)) for b in box)
    g = tuple(tuple(parse(t, coords) for t in row) for row in rows)
    res = (grid_res,) * n if isinstance(grid_res, int) else tuple(grid_res)
    return Chart(
        name,
        tuple(coords),
        box,
        g,
        res,
        tuple(parse(c, coords) for c in constraints),
        None if xi1 is None else tuple(map(float, xi1)),
        None if xi2 is None else tuple(map(float, xi2)),
        metric_text=tuple(tuple(r) for r in rows),
        constraint_text=tuple(constraints),
    )


def example_charts(grid_res=5):
    coords = ("x", "y", "u", "v")
    U = make_chart(coords, EXAMPLE_ROWS, grid_res=grid_res, constraints=("x - u",),
                   xi1=(1, 0, 1, 0), xi2=(0, 1, 0, 1), name="U")
    V = make_chart(coords, EXAMPLE_ROWS, grid_res=grid_res, constraints=("u + log(2) - x",),
                   xi1=(1, 0, 2, 0), xi2=(0, 1, 0, 1), name="U'")
    return U, V


@pytest.fixture(scope="session")
def example_decomposition():
    from parallel_metrics.pipeline import decompose
    from parallel_metrics.specfile import load

    return decompose(load(FIXTURES / "example_r4.toml"))


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES
