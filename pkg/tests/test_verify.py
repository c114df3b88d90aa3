import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parallel_metrics.errors import BoundaryPoint, CertificationFailure, NonPositiveCoefficient
from parallel_metrics.geometry import metric_jet
from parallel_metrics.partition import interior_mask
from parallel_metrics.pipeline import decompose
from parallel_metrics.specfile import load
from parallel_metrics.verify import assemble, certify, covariant_residual, verification_points


@pytest.fixture(scope="module")
def basis(example_decomposition):
    return example_decomposition.basis


def interior(chart, fd_step=1e-4):
    pts = chart.grid()
    return pts[interior_mask(chart, pts, fd_step)]


def test_metric_and_blocks_are_parallel(basis):
    chart = basis.analyses[0].chart
    pts = interior(chart)
    r = covariant_residual(lambda p: metric_jet(chart, p).Ginv, chart, pts)
    # pure truncation error of the central difference of e^{-2x} and e^{-2u}: (s^2 / 6) * 8 e^{-2x}
    step = 1e-4 * 2
    bound = step**2 / 6 * 8 * np.exp(-2 * np.minimum(pts[:, 0], pts[:, 2]))
    assert np.all(r.residuals <= 1.01 * bound)
    fine = covariant_residual(lambda p: metric_jet(chart, p).Ginv, chart, pts, fd_step=5e-5)
    assert fine.max_residual < 1e-7
    for a in range(basis.A):
        r = covariant_residual(lambda p, a=a: basis.h(a, 0, p), chart, pts, tensor_id=f"h{a + 1}")
        assert r.max_residual < 1e-6
        assert np.all(r.residuals >= 0)


def test_rank_one_coordinate_slice_is_not_parallel(basis):
    chart = basis.analyses[0].chart
    pts = interior(chart)
    dxdx = np.zeros((4, 4))
    dxdx[0, 0] = 1

    r = covariant_residual(lambda p: np.broadcast_to(dxdx, np.shape(p)[:-1] + (4, 4)), chart, pts)
    # constant tensor: only the connection term survives, Gamma^y_{yx} = 1
    np.testing.assert_allclose(r.residuals, 1.0, rtol=1e-12)


def test_residual_scales_quadratically_with_step(basis):
    chart = basis.analyses[0].chart
    pts = interior(chart, 2e-3)

    def h(p):
        return metric_jet(chart, p).Ginv

    r1 = covariant_residual(h, chart, pts, fd_step=2e-3).max_residual
    r2 = covariant_residual(h, chart, pts, fd_step=1e-3).max_residual
    assert 3.5 < r1 / r2 < 4.5


def test_boundary_point(basis):
    chart = basis.analyses[0].chart
    with pytest.raises(BoundaryPoint):
        covariant_residual(lambda p: metric_jet(chart, p, check=False).Ginv, chart, np.array([[1.0, 0, 0, 0]]))


def test_assemble_ones_reproduces_metric(basis):
    pts = basis.analyses[1].field.points
    g = assemble(basis, [1.0, 1.0])
    np.testing.assert_allclose(g(1, pts), metric_jet(basis.analyses[1].chart, pts).Ginv, atol=1e-9)


def test_assemble_scaled_example(basis):
    pts = basis.analyses[0].field.points
    x, u = pts[:, 0], pts[:, 2]
    expected = np.zeros((len(pts), 4, 4))
    expected[:, 0, 0], expected[:, 1, 1] = 2, 2 * np.exp(-2 * x)
    expected[:, 2, 2], expected[:, 3, 3] = 3, 3 * np.exp(-2 * u)
    np.testing.assert_allclose(assemble(basis, [2, 3])(0, pts), expected, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=2))
def test_assembled_metric_is_positive_definite(basis, c):
    pts = basis.analyses[0].field.points[::9]
    w = np.linalg.eigvalsh(assemble(basis, c)(0, pts))
    assert w.min() > 0


def test_zero_coefficient(basis):
    with pytest.raises(NonPositiveCoefficient):
        assemble(basis, [1.0, 0.0])
    with pytest.warns(UserWarning):
        g = assemble(basis, [1.0, 0.0], allow_degenerate=True)
    assert g.degenerate
    w = np.linalg.eigvalsh(g(0, np.array([[0.5, 0, 0, 0]])))
    assert w.min() > -1e-12 and (w > 1e-9).sum() == 2


def test_bad_coefficients(basis):
    with pytest.raises(NonPositiveCoefficient):
        assemble(basis, [1.0, -1.0])
    with pytest.raises(ValueError):
        assemble(basis, [1.0, 1.0, 1.0])


def test_residual_is_subadditive_over_the_cone(basis):
    chart = basis.analyses[0].chart
    pts = interior(chart)
    res = [covariant_residual(lambda p, a=a: basis.h(a, 0, p), chart, pts).residuals for a in range(2)]
    c = np.array([2.5, 0.7])
    total = covariant_residual(lambda p: assemble(basis, c)(0, p), chart, pts).residuals
    assert np.all(total <= c[0] * res[0] + c[1] * res[1] + 1e-15)


def test_certify_example(basis):
    s = certify(basis, trials=20, seed=0)
    assert s.dimension == 2
    assert s.basis_max_residual < 1e-5
    assert s.control_min_residual > 1e-3
    assert s.separation > 100
    for chart in s.charts:
        assert any(k.startswith("cross_block") for k in chart.control_residuals)
        assert any(k.startswith("slice") for k in chart.control_residuals)


def test_verification_points_are_interior_and_seeded(basis):
    chart = basis.analyses[0].chart
    a = verification_points(chart, chart.grid(), 1e-4, 32, 7)
    b = verification_points(chart, chart.grid(), 1e-4, 32, 7)
    np.testing.assert_array_equal(a, b)
    assert len(a) == len(interior(chart)) + 32
    assert np.all(interior_mask(chart, a, 1e-4))


def test_certify_rejects_impossible_tolerance(basis):
    with pytest.raises(CertificationFailure) as info:
        certify(basis, trials=2, seed=0, parallel_tol=1e-14)
    assert info.value.chart is not None and info.value.point is not None


def test_certify_flags_controls_that_look_parallel(basis):
    # with a huge tolerance the controls can no longer be separated
    with pytest.raises(CertificationFailure, match="negative control"):
        certify(basis, trials=2, seed=0, parallel_tol=0.5)


@pytest.mark.parametrize("name, A", [("hyperbolic_r2", 1), ("triple_product", 3)])
def test_certify_other_fixtures(fixtures_dir, name, A):
    d = decompose(load(fixtures_dir / f"{name}.toml"))
    s = certify(d.basis, trials=5, seed=1)
    assert s.dimension == A
    assert s.separation > 100
