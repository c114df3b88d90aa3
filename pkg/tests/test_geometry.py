import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from parallel_metrics.errors import NotPositiveDefinite, OutsideChart, SkewnessViolation
from parallel_metrics.expr import parse
from parallel_metrics.geometry import (
    Chart,
    christoffel,
    curvature_operator,
    lower_riemann,
    metric_jet,
    riemann,
)

from conftest import EXAMPLE_ROWS, make_chart

# metrics written in a syntax both parsers accept
ZOO = {
    "example": (("x", "y", "u", "v"), EXAMPLE_ROWS),
    "hyperbolic": (("x", "y"), [["1"], ["0", "exp(2*x)"]]),
    "sphere_patch": (("t", "p"), [["1"], ["0", "sin(t)**2"]]),
    "warped3": (
        ("x", "y", "z"),
        [["1 + 0.3*sin(y)**2"], ["0.2*sin(x*z)", "exp(0.5*x - 0.2*z)"], ["0.1*cos(x + y)", "0", "2 + cos(x)*sin(y)"]],
    ),
    "full3": (
        ("a", "b", "c"),
        [["2 + a**2"], ["0.3*a*b", "1 + exp(b/3)"], ["0.2*sin(c)", "0.1*a*c", "sqrt(4 + b**2)"]],
    ),
}

BOX = {"sphere_patch": ((0.5, 2.5), (-1, 1))}


def zoo_chart(name):
    coords, rows = ZOO[name]
    box = BOX.get(name, ((-1, 1),) * len(coords))
    return make_chart(coords, rows, box=box, name=name)


def sympy_curvature(coords, rows):
    xs = sp.symbols(coords)
    n = len(xs)
    ns = {str(s): s for s in xs}
    g = sp.zeros(n, n)
    for i, row in enumerate(rows):
        for j, text in enumerate(row):
            g[i, j] = g[j, i] = sp.sympify(text, locals=ns)
    ginv = g.inv(method="LU")
    gamma = [[[sp.Rational(1, 2) * sum(ginv[k, l] * (sp.diff(g[j, l], xs[i]) + sp.diff(g[i, l], xs[j]) - sp.diff(g[i, j], xs[l])) for l in range(n)) for j in range(n)] for i in range(n)] for k in range(n)]
    R = [[[[sp.diff(gamma[i][l][j], xs[k]) - sp.diff(gamma[i][k][j], xs[l])
            + sum(gamma[i][k][m] * gamma[m][l][j] - gamma[i][l][m] * gamma[m][k][j] for m in range(n))
            for l in range(n)] for k in range(n)] for j in range(n)] for i in range(n)]
    fg = sp.lambdify(xs, gamma, "numpy", cse=True)
    fr = sp.lambdify(xs, R, "numpy", cse=True)
    return (lambda p: np.array(fg(*p), dtype=float)), (lambda p: np.array(fr(*p), dtype=float))


def chart_points(chart, count, seed):
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in chart.box])
    hi = np.array([b[1] for b in chart.box])
    return rng.uniform(lo, hi, (count, chart.dim))


@pytest.mark.parametrize("name", sorted(ZOO))
def test_christoffel_and_riemann_match_symbolic_oracle(name):
    chart = zoo_chart(name)
    gam_ref, riem_ref = sympy_curvature(*ZOO[name])
    pts = chart_points(chart, 15, 0)
    mj = metric_jet(chart, pts)
    gam = christoffel(mj)
    R = riemann(mj, gam)
    for b, p in enumerate(pts):
        np.testing.assert_allclose(gam[b], gam_ref(p), atol=1e-12)
        np.testing.assert_allclose(R[b], riem_ref(p), atol=1e-10)


def test_example_christoffel_closed_form():
    chart = zoo_chart("example")
    pts = chart_points(chart, 100, 7)
    gam = christoffel(metric_jet(chart, pts))
    expected = np.zeros_like(gam)
    x, u = pts[:, 0], pts[:, 2]
    expected[:, 0, 1, 1] = -np.exp(2 * x)
    expected[:, 1, 0, 1] = expected[:, 1, 1, 0] = 1
    expected[:, 2, 3, 3] = -np.exp(2 * u)
    expected[:, 3, 2, 3] = expected[:, 3, 3, 2] = 1
    assert np.abs(gam - expected).max() < 1e-12


@pytest.mark.parametrize(
    "point, diag",
    [((0, 0, 0, 0), (1, 1, 1, 1)), ((1, 0, 0, 0), (1, np.e**2, 1, 1))],
)
def test_example_metric_values(point, diag):
    mj = metric_jet(zoo_chart("example"), np.array(point, float))
    np.testing.assert_allclose(mj.G, np.diag(diag), rtol=1e-15)
    np.testing.assert_allclose(mj.G @ mj.Ginv, np.eye(4), atol=1e-12)


def test_flat_metric_has_no_curvature():
    chart = make_chart(("x", "y"), [["1"], ["0", "1"]])
    mj = metric_jet(chart, chart_points(chart, 5, 1))
    assert np.all(mj.dG == 0) and np.all(mj.d2G == 0)
    assert np.all(christoffel(mj) == 0)
    assert np.all(riemann(mj) == 0)


def test_hyperbolic_sectional_curvature():
    chart = zoo_chart("hyperbolic")
    mj = metric_jet(chart, chart_points(chart, 10, 2))
    Rl = lower_riemann(mj, riemann(mj))
    K = Rl[:, 0, 1, 0, 1] / (mj.G[:, 0, 0] * mj.G[:, 1, 1] - mj.G[:, 0, 1] ** 2)
    np.testing.assert_allclose(K, -1.0, rtol=1e-12)


@pytest.mark.parametrize(
    "xi1, xi2, scale",
    [((1, 0, 1, 0), (0, 1, 0, 1), 1.0), ((1, 0, 2, 0), (0, 1, 0, 1), 2.0)],
)
def test_example_curvature_operator(xi1, xi2, scale):
    chart = zoo_chart("example")
    pts = chart_points(chart, 20, 3)
    mj = metric_jet(chart, pts)
    op = curvature_operator(mj, riemann(mj), xi1, xi2)
    for p, M in zip(pts, op.M):
        x, u = p[0], p[2]
        expected = np.zeros((4, 4))
        expected[0, 1], expected[1, 0] = -np.exp(2 * x), 1
        expected[2, 3], expected[3, 2] = -scale * np.exp(2 * u), scale
        np.testing.assert_allclose(M, expected, atol=1e-12)


def test_equal_xi_gives_zero_operator():
    chart = zoo_chart("warped3")
    mj = metric_jet(chart, chart_points(chart, 5, 4))
    xi = np.array([0.3, -0.7, 0.2])
    assert np.abs(curvature_operator(mj, riemann(mj), xi, xi).M).max() < 1e-15


def test_skewness_violation_detected():
    chart = zoo_chart("hyperbolic")
    mj = metric_jet(chart, np.array([0.2, 0.1]))
    R = riemann(mj).copy()
    R[0, 0, 0, 1] += 1e-3
    R[0, 0, 1, 0] -= 1e-3
    with pytest.raises(SkewnessViolation):
        curvature_operator(mj, R, (1, 0), (0, 1))


def test_outside_chart_and_not_positive_definite():
    chart = make_chart(("x", "y"), [["x"], ["0", "1"]], box=((-1, 1), (-1, 1)), constraints=("x + 0.5",))
    with pytest.raises(OutsideChart):
        metric_jet(chart, np.array([-0.7, 0.0]))
    with pytest.raises(OutsideChart):
        metric_jet(chart, np.array([0.5, 1.5]))
    with pytest.raises(NotPositiveDefinite):
        metric_jet(chart, np.array([-0.2, 0.0]))


@pytest.mark.parametrize("name", ["warped3", "full3", "example"])
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_curvature_symmetries(name, seed):
    chart = zoo_chart(name)
    p = chart_points(chart, 1, seed)[0]
    mj = metric_jet(chart, p)
    R = riemann(mj)
    bianchi = R + np.einsum("ijkl->iklj", R) + np.einsum("ijkl->iljk", R)
    assert np.abs(bianchi).max() < 1e-10
    Rl = lower_riemann(mj, R)
    assert np.abs(Rl + np.swapaxes(Rl, 0, 1)).max() < 1e-10
    assert np.abs(Rl + np.swapaxes(Rl, 2, 3)).max() < 1e-10
    assert np.abs(Rl - np.einsum("ijkl->klij", Rl)).max() < 1e-10


def test_jet_symmetries():
    chart = zoo_chart("full3")
    mj = metric_jet(chart, chart_points(chart, 6, 5))
    assert np.array_equal(mj.dG, np.swapaxes(mj.dG, 1, 2))
    assert np.array_equal(mj.d2G, np.swapaxes(mj.d2G, 1, 2))
    assert np.array_equal(mj.d2G, np.swapaxes(mj.d2G, 3, 4))


def test_chart_validation():
    coords = ("x", "y")
    g = ((parse("1", coords),), (parse("0", coords), parse("1", coords)))
    with pytest.raises(ValueError):
        Chart("bad", coords, ((1, 0), (0, 1)), g, (3, 3))
    with pytest.raises(ValueError):
        Chart("bad", coords, ((0, 1),), g, (3, 3))
    with pytest.raises(ValueError):
        Chart("bad", coords, ((0, 1), (0, 1)), g, (3, 3), xi1=(1, 0, 0), xi2=(0, 1, 0))
