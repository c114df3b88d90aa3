"""Pointwise tensor calculus for a metric given in covariant coordinates.

All functions accept points with leading batch axes; index conventions:

* ``dG[..., i, j, k] = d_k g_ij``, ``d2G[..., i, j, k, l] = d_k d_l g_ij``
* ``gamma[..., k, i, j] = Gamma^k_ij``
* ``riem[..., i, j, k, l] = R^i_jkl``
  with ``R^i_jkl = d_k Gamma^i_lj - d_l Gamma^i_kj
  + Gamma^i_km Gamma^m_lj - Gamma^i_lm Gamma^m_kj``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from .errors import NotPositiveDefinite, OutsideChart, SkewnessViolation
from .expr import Expr, eval_jet2

PD_TOL = 1e-10
SKEW_TOL = 1e-9


@dataclass(frozen=True)
class Chart:
    """A coordinate box cut down by strict inequality constraints.

    ``g_cov`` holds the lower triangle of the covariant metric:
    ``g_cov[i][j]`` for ``j <= i``. ``xi1``/``xi2`` optionally pin the
    constant vectors used for the curvature operator on this chart.
    """

    name: str
    coord_names: tuple[str, ...]
    box: tuple[tuple[float, float], ...]
    g_cov: tuple[tuple[Expr, ...], ...]
    grid_res: tuple[int, ...]
    constraints: tuple[Expr, ...] = ()
    xi1: tuple[float, ...] | None = None
    xi2: tuple[float, ...] | None = None
    # original source strings, kept for serialisation
    metric_text: tuple[tuple[str, ...], ...] | None = field(default=None, compare=False)
    constraint_text: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        n = self.dim
        if len(self.box) != n or len(self.grid_res) != n:
            raise ValueError(f"chart {self.name!r}: box and grid_res need {n} entries")
        for lo, hi in self.box:
            if not lo <= hi:
                raise ValueError(f"chart {self.name!r}: empty box interval ({lo}, {hi})")
        if len(self.g_cov) != n or any(len(row) != i + 1 for i, row in enumerate(self.g_cov)):
            raise ValueError(f"chart {self.name!r}: metric must be a lower triangle of size {n}")
        for xi in (self.xi1, self.xi2):
            if xi is not None and len(xi) != n:
                raise ValueError(f"chart {self.name!r}: xi vectors need {n} components")

    @property
    def dim(self) -> int:
        return len(self.coord_names)

    @property
    def widths(self) -> np.ndarray:
        return np.array([hi - lo for lo, hi in self.box])

    def coefficient(self, i: int, j: int) -> Expr:
        return self.g_cov[i][j] if j <= i else self.g_cov[j][i]

    def lattice(self, res: Sequence[int] | None = None) -> np.ndarray:
        """All lattice points of the box in row-major order, shape (N, n)."""
        res = self.grid_res if res is None else res
        axes = [
            np.linspace(lo, hi, r) if hi > lo else np.array([lo])
            for (lo, hi), r in zip(self.box, res)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def in_box(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def satisfies_constraints(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        ok = np.ones(points.shape[:-1], dtype=bool)
        for c in self.constraints:
            ok &= eval_jet2(c, points).value > 0
        return ok

    def admissible(self, points) -> np.ndarray:
        return self.in_box(points) & self.satisfies_constraints(points)

    def grid(self) -> np.ndarray:
        pts = self.lattice()
        return pts[self.admissible(pts)]


@dataclass(frozen=True)
class MetricJet:
    point: np.ndarray
    G: np.ndarray
    Ginv: np.ndarray
    dG: np.ndarray
    d2G: np.ndarray


def metric_jet(chart: Chart, point, check: bool = True) -> MetricJet:
    """Metric values and first two derivatives at ``point`` (or a batch)."""
    point = np.asarray(point, dtype=float)
    n = chart.dim
    if point.shape[-1] != n:
        raise ValueError(f"point has dimension {point.shape[-1]}, chart has {n}")
    if check:
        bad = ~chart.admissible(point)
        if np.any(bad):
            raise OutsideChart("point outside chart", chart.name, _first(point, bad))
    batch = point.shape[:-1]
    G = np.empty(batch + (n, n))
    dG = np.empty(batch + (n, n, n))
    d2G = np.empty(batch + (n, n, n, n))
    for i in range(n):
        for j in range(i + 1):
            jet = eval_jet2(chart.g_cov[i][j], point)
            for a, b in {(i, j), (j, i)}:
                G[..., a, b] = jet.value
                dG[..., a, b, :] = jet.grad
                d2G[..., a, b, :, :] = jet.hess
    w = np.linalg.eigvalsh(G)
    if np.any(w[..., 0] <= PD_TOL):
        bad = w[..., 0] <= PD_TOL
        raise NotPositiveDefinite(
            f"metric not positive definite (smallest eigenvalue {float(np.min(w[..., 0])):.3g})",
            chart.name,
            _first(point, bad),
        )
    Ginv = np.linalg.inv(G)
    Ginv = 0.5 * (Ginv + np.swapaxes(Ginv, -1, -2))
    return MetricJet(point, G, Ginv, dG, d2G)


def _first(point: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if point.ndim == 1:
        return point
    return point[mask][0]


def _first_kind(dG: np.ndarray) -> np.ndarray:
    # Gamma_{l ij} = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    return 0.5 * (
        np.einsum("...jli->...lij", dG)
        + np.einsum("...ilj->...lij", dG)
        - np.einsum("...ijl->...lij", dG)
    )


def christoffel(mj: MetricJet) -> np.ndarray:
    """Christoffel symbols of the second kind, ``gamma[..., k, i, j]``."""
    gamma = np.einsum("...kl,...lij->...kij", mj.Ginv, _first_kind(mj.dG))
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


def christoffel_derivative(mj: MetricJet) -> np.ndarray:
    """``dgamma[..., k, i, j, m] = d_m Gamma^k_ij`` from second metric derivatives."""
    first = _first_kind(mj.dG)
    # d_m of the first-kind symbols
    dfirst = 0.5 * (
        np.einsum("...jlim->...lijm", mj.d2G)
        + np.einsum("...iljm->...lijm", mj.d2G)
        - np.einsum("...ijlm->...lijm", mj.d2G)
    )
    # d_m Ginv = -Ginv (d_m G) Ginv
    dGinv = -np.einsum("...ka,...abm,...bl->...klm", mj.Ginv, mj.dG, mj.Ginv)
    return np.einsum("...klm,...lij->...kijm", dGinv, first) + np.einsum(
        "...kl,...lijm->...kijm", mj.Ginv, dfirst
    )


def riemann(mj: MetricJet, gamma: np.ndarray | None = None) -> np.ndarray:
    """Riemann tensor ``riem[..., i, j, k, l] = R^i_jkl``; exactly antisymmetric in (k, l)."""
    if gamma is None:
        gamma = christoffel(mj)
    dgamma = christoffel_derivative(mj)
    # A^i_jkl = d_k Gamma^i_lj + Gamma^i_km Gamma^m_lj
    a = np.einsum("...iljk->...ijkl", dgamma) + np.einsum("...ikm,...mlj->...ijkl", gamma, gamma)
    return a - np.swapaxes(a, -1, -2)


@dataclass(frozen=True)
class CurvatureOperator:
    point: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    M: np.ndarray  # M[..., i, j] = R^i_jkl xi1^k xi2^l


def skewness(G: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``max |GM + (GM)^T|`` per point, relative to ``max(1, max |GM|)``."""
    GM = G @ M
    sym = np.abs(GM + np.swapaxes(GM, -1, -2)).max(axis=(-1, -2))
    scale = np.maximum(1.0, np.abs(GM).max(axis=(-1, -2)))
    return sym / scale


def curvature_operator(mj: MetricJet, riem: np.ndarray, xi1, xi2, chart: str | None = None) -> CurvatureOperator:
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    M = np.einsum("...ijkl,k,l->...ij", riem, xi1, xi2)
    sk = skewness(mj.G, M)
    if np.any(sk > SKEW_TOL):
        bad = sk > SKEW_TOL
        raise SkewnessViolation(
            f"curvature operator not skew with respect to the metric (defect {float(np.max(sk)):.3g})",
            chart,
            _first(mj.point, bad),
        )
    return CurvatureOperator(mj.point, xi1, xi2, M)


def lower_riemann(mj: MetricJet, riem: np.ndarray) -> np.ndarray:
    """``R_ijkl = g_im R^m_jkl``."""
    return np.einsum("...im,...mjkl->...ijkl", mj.G, riem)


def coordinate_pairs(n: int):
    """Coordinate basis pairs (e_i, e_j), i < j, in lexicographic order."""
    eye = np.eye(n)
    for i, j in product(range(n), repeat=2):
        if i < j:
            yield eye[i], eye[j]
