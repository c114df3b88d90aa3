"""Finite-difference certification of parallel tensors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BoundaryPoint, CertificationFailure, NonPositiveCoefficient
from .geometry import Chart, christoffel, metric_jet
from .glue import ParallelBasis
from .partition import FD_STEP, fd_steps, interior_mask, stencil

PARALLEL_TOL = 1e-5
CONTROL_FACTOR = 10.0
N_RANDOM_POINTS = 32
CONTROL_SCALE = 0.5


@dataclass(frozen=True)
class ResidualReport:
    tensor_id: str
    points: np.ndarray
    residuals: np.ndarray  # max_{k,i,j} |nabla_k T^ij| per point
    fd_step: float

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0

    @property
    def worst_point(self) -> np.ndarray:
        return self.points[int(np.argmax(self.residuals))]


def _nabla(Tc: np.ndarray, Ts: np.ndarray, gamma: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """``nabla_k T^ij`` from centre values (B, n, n) and stencil values (B, n, 2, n, n)."""
    dT = (Ts[:, :, 0] - Ts[:, :, 1]) / (2 * steps[None, :, None, None])
    return (
        dT
        + np.einsum("bikm,bmj->bkij", gamma, Tc)
        + np.einsum("bjkm,bim->bkij", gamma, Tc)
    )


def _residuals(Tc, Ts, gamma, steps) -> np.ndarray:
    return np.abs(_nabla(Tc, Ts, gamma, steps)).max(axis=(1, 2, 3))


def covariant_residual(
    T: Callable[[np.ndarray], np.ndarray],
    chart: Chart,
    points,
    fd_step: float = FD_STEP,
    tensor_id: str = "T",
) -> ResidualReport:
    """Pointwise size of the covariant derivative of a contravariant 2-tensor field."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = chart.dim
    steps = fd_steps(chart, fd_step)
    st = stencil(pts, steps)
    ok = np.all(chart.admissible(st), axis=(1, 2))
    if not np.all(ok):
        raise BoundaryPoint("finite-difference stencil leaves the chart", chart.name, pts[~ok][0])
    Tc = np.asarray(T(pts))
    Ts = np.asarray(T(st.reshape(-1, n))).reshape(len(pts), n, 2, n, n)
    gamma = christoffel(metric_jet(chart, pts))
    return ResidualReport(tensor_id, pts, _residuals(Tc, Ts, gamma, steps), fd_step)


def verification_points(chart: Chart, grid_points: np.ndarray, fd_step: float, n_random: int, seed: int) -> np.ndarray:
    """Interior grid points followed by seeded random interior points."""
    interior = grid_points[interior_mask(chart, grid_points, fd_step)]
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in chart.box])
    hi = np.array([b[1] for b in chart.box])
    extra = []
    for _ in range(200):
        if len(extra) >= n_random:
            break
        cand = rng.uniform(lo, hi, size=(4 * n_random, chart.dim))
        cand = cand[interior_mask(chart, cand, fd_step)]
        extra.extend(cand[: n_random - len(extra)])
    extra = np.array(extra).reshape(-1, chart.dim)
    return np.concatenate([interior, extra]) if len(interior) else extra


@dataclass(frozen=True)
class AssembledMetric:
    """``sum_a c_a h_a`` evaluated chart by chart."""

    coefficients: np.ndarray
    basis: ParallelBasis
    degenerate: bool = False

    def __call__(self, chart: int, points) -> np.ndarray:
        H = self.basis.h_all(chart, points)
        return np.tensordot(self.coefficients, H, axes=(0, 0))


def assemble(basis: ParallelBasis, c, allow_degenerate: bool = False) -> AssembledMetric:
    c = np.asarray(c, dtype=float)
    if c.shape != (basis.A,):
        raise ValueError(f"expected {basis.A} coefficients, got shape {c.shape}")
    if np.any(c < 0):
        raise NonPositiveCoefficient(f"coefficients must be positive, got {c.tolist()}")
    degenerate = bool(np.any(c == 0))
    if degenerate:
        if not allow_degenerate:
            raise NonPositiveCoefficient(f"zero coefficient gives a degenerate tensor, not a metric: {c.tolist()}")
        warnings.warn("zero coefficient: assembled tensor is only positive semi-definite", stacklevel=2)
    return AssembledMetric(c, basis, degenerate)


@dataclass
class ChartCertificate:
    chart: str
    n_points: int
    metric_residual: float
    basis_residuals: list[float]
    assembled_residual: float
    control_residuals: dict[str, float] = field(default_factory=dict)


@dataclass
class CertificationSummary:
    A: int
    parallel_tol: float
    fd_step: float
    trials: int
    seed: int
    coefficients: list[list[float]]
    charts: list[ChartCertificate]

    @property
    def basis_max_residual(self) -> float:
        return max(max([c.metric_residual] + c.basis_residuals + [c.assembled_residual]) for c in self.charts)

    @property
    def control_min_residual(self) -> float:
        vals = [v for c in self.charts for v in c.control_residuals.values()]
        return min(vals) if vals else float("inf")

    @property
    def separation(self) -> float:
        return self.control_min_residual / max(self.basis_max_residual, 1e-300)

    @property
    def dimension(self) -> int:
        return self.A


def _cross_block_part(E0: np.ndarray, H: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Remove the block-diagonal part of a constant contravariant tensor."""
    out = np.broadcast_to(E0, H.shape[1:]).copy()
    for Ha in H:
        P = Ha @ G
        out -= P @ E0 @ np.swapaxes(P, -1, -2)
    return out


def certify(
    basis: ParallelBasis,
    trials: int = 20,
    seed: int = 0,
    parallel_tol: float = PARALLEL_TOL,
    fd_step: float = FD_STEP,
    n_random: int = N_RANDOM_POINTS,
    control_scale: float = CONTROL_SCALE,
) -> CertificationSummary:
    """Check that the cone spanned by the basis is parallel and nothing outside it is.

    Positive side: the metric, each ``h_a`` and ``trials`` random positive
    combinations have residual below ``parallel_tol``. Negative side: ``trials``
    cross-block perturbations of ``h`` and the rank-one slices of each block
    exceed ``CONTROL_FACTOR * parallel_tol``.
    """
    rng = np.random.default_rng(seed)
    A, n = basis.A, basis.n
    coeffs = rng.uniform(0.1, 3.0, size=(trials, A))
    perturbations = []
    for _ in range(trials if A > 1 else 0):
        E0 = rng.uniform(-1, 1, (n, n))
        perturbations.append(0.5 * (E0 + E0.T))

    charts = []
    for c, an in enumerate(basis.analyses):
        chart = an.chart
        pts = verification_points(chart, an.field.points, fd_step, n_random, seed + c)
        if len(pts) == 0:
            continue
        steps = fd_steps(chart, fd_step)
        st = stencil(pts, steps).reshape(-1, n)
        allp = np.concatenate([pts, st])
        mj_all = metric_jet(chart, allp)
        Y = basis.frames(c, allp).Y
        H = []
        for a in range(A):
            B = Y[..., basis.columns(a, c)]
            H.append(B @ np.swapaxes(B, -1, -2))
        H = np.stack(H)  # (A, P + P*2n, n, n)
        P = len(pts)
        gamma = christoffel(metric_jet(chart, pts))

        def res(T):
            return _residuals(T[:P], T[P:].reshape(P, n, 2, n, n), gamma, steps)

        def fail(what, r):
            k = int(np.argmax(r))
            raise CertificationFailure(f"{what}: residual {float(r[k]):.3g}", chart.name, pts[k])

        r_h = res(mj_all.Ginv)
        if r_h.max() >= parallel_tol:
            fail("metric itself is not parallel to tolerance", r_h)
        basis_res = []
        for a in range(A):
            r = res(H[a])
            if r.max() >= parallel_tol:
                fail(f"h_{a + 1} is not parallel", r)
            basis_res.append(float(r.max()))
        worst_combo = 0.0
        for t, cvec in enumerate(coeffs):
            r = res(np.tensordot(cvec, H, axes=(0, 0)))
            if r.max() >= parallel_tol:
                fail(f"combination {cvec.tolist()} is not parallel", r)
            worst_combo = max(worst_combo, float(r.max()))

        controls = {}
        floor = CONTROL_FACTOR * parallel_tol
        for t, E0 in enumerate(perturbations):
            E = _cross_block_part(E0, H, mj_all.G)
            r = res(mj_all.Ginv + control_scale * E)
            controls[f"cross_block_{t + 1}"] = float(r.max())
        for a in range(A):
            cols = basis.columns(a, c)
            if len(cols) < 2:
                continue
            y = Y[..., cols[0]]
            controls[f"slice_h{a + 1}"] = float(res(y[..., :, None] * y[..., None, :]).max())
        for name, v in controls.items():
            if v <= floor:
                raise CertificationFailure(
                    f"negative control {name} looks parallel (residual {v:.3g} <= {floor:.3g})", chart.name
                )
        charts.append(ChartCertificate(chart.name, P, float(r_h.max()), basis_res, worst_combo, controls))
    return CertificationSummary(A, parallel_tol, fd_step, trials, seed, coeffs.tolist(), charts)
