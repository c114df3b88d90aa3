"""Curvature eigenframes.

The curvature operator ``M`` is skew with respect to the metric ``G``, so
``S = G^{1/2} M G^{-1/2}`` is a real skew-symmetric matrix and ``iS`` is
Hermitian. Diagonalising ``iS`` gives the canonical form of ``S`` directly:
an eigenvector ``z`` of ``iS`` with eigenvalue ``-mu < 0`` is an eigenvector
of ``S`` for ``i*mu``, and ``sqrt(2) (Re z, Im z)`` is an orthonormal pair
spanning the corresponding invariant plane.

Frames are ordered by ``mu`` descending, one conjugate pair per plane,
followed by the kernel vector when ``n`` is odd.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .errors import AlignmentBreak, EigengapTooSmall, NonImaginaryEigenvalue, NotGeneric
from .geometry import Chart, CurvatureOperator, MetricJet, coordinate_pairs, curvature_operator, metric_jet, riemann

GAP_REL_TOL = 1e-6
ALIGN_MIN_OVERLAP = 0.5
EIGEN_RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class GenericityCertificate:
    chart: str
    xi1: np.ndarray
    xi2: np.ndarray
    min_eigengap: float
    gap_tol: float
    rng_seed: int | None
    source: str  # "given", "coordinate-pair" or "random"
    gap_rel_tol: float = GAP_REL_TOL


@dataclass(frozen=True)
class SpectralFrame:
    """Eigen data at one point (or a batch, along leading axes)."""

    point: np.ndarray
    lambdas: np.ndarray  # complex (..., n): i mu_1, -i mu_1, i mu_2, ...
    Z: np.ndarray  # complex eigenvector columns
    X: np.ndarray  # real frame, X_{2k-1} = Re Z_{2k-1}, X_{2k} = Im Z_{2k-1}
    Y: np.ndarray  # G-orthonormal frame
    rho: np.ndarray  # Y_i = sqrt(rho_i) X_i
    mu: np.ndarray  # (..., m) plane frequencies, descending
    eigengap: np.ndarray  # (...) smallest distance between eigenvalues

    def __getitem__(self, idx) -> "SpectralFrame":
        return SpectralFrame(*(getattr(self, f)[idx] for f in _FRAME_FIELDS))


_FRAME_FIELDS = ("point", "lambdas", "Z", "X", "Y", "rho", "mu", "eigengap")


def _stack_frames(frames: list[SpectralFrame]) -> SpectralFrame:
    return SpectralFrame(*(np.stack([getattr(f, k) for f in frames]) for k in _FRAME_FIELDS))


def _sqrtm_spd(G: np.ndarray):
    w, V = np.linalg.eigh(G)
    s = np.sqrt(w)
    half = np.einsum("...ik,...k,...jk->...ij", V, s, V)
    half_inv = np.einsum("...ik,...k,...jk->...ij", V, 1.0 / s, V)
    return half, half_inv


def spectrum(G: np.ndarray, M: np.ndarray):
    """Plane frequencies ``mu`` (descending) and eigengap for each point."""
    half, half_inv = _sqrtm_spd(G)
    S = half @ M @ half_inv
    S = 0.5 * (S - np.swapaxes(S, -1, -2))
    nu = np.linalg.eigvalsh(1j * S)
    return _mu_and_gap(nu)


def _mu_and_gap(nu: np.ndarray):
    n = nu.shape[-1]
    m = n // 2
    mu = -nu[..., :m]
    gap = np.min(np.diff(nu, axis=-1), axis=-1) if n > 1 else np.full(nu.shape[:-1], np.inf)
    return mu, gap


def eigen_frame(
    op: CurvatureOperator,
    mj: MetricJet,
    gap_rel_tol: float = GAP_REL_TOL,
    chart: str | None = None,
) -> SpectralFrame:
    """Complex eigenframe, real orthogonal frame and orthonormal frame.

    Raw gauge: in each plane the phase of ``Z`` makes its first significant
    component (modulus above 1e-3 of the largest) real and positive; the
    kernel vector of odd dimension has its first non-negligible component
    positive.
    """
    G, M = mj.G, op.M
    n = G.shape[-1]
    m = n // 2
    half, half_inv = _sqrtm_spd(G)
    S = half @ M @ half_inv
    S = 0.5 * (S - np.swapaxes(S, -1, -2))
    nu, V = np.linalg.eigh(1j * S)
    mu, gap = _mu_and_gap(nu)
    scale = np.max(np.abs(nu), axis=-1)
    bad = gap <= gap_rel_tol * scale
    if np.any(bad):
        raise EigengapTooSmall(
            f"eigenvalues not distinct (gap {float(np.min(gap)):.3g}, tolerance {gap_rel_tol:g} x {float(np.max(scale)):.3g})",
            chart,
            _first(op.point, bad),
        )

    batch = G.shape[:-2]
    # coordinate eigenvectors of M: G^{-1/2} applied to eigenvectors of S
    W = half_inv @ V[..., :, :]  # complex (..., n, n); column k <-> nu_k ascending
    Z = np.empty(batch + (n, n), dtype=complex)
    lambdas = np.empty(batch + (n,), dtype=complex)
    for k in range(m):
        z = W[..., :, k]
        z = z / np.linalg.norm(z, axis=-1, keepdims=True)
        pivot = _first_significant(z, 1e-3)
        z = z * (np.abs(pivot) / pivot)
        Z[..., :, 2 * k] = z
        Z[..., :, 2 * k + 1] = np.conj(z)
        lambdas[..., 2 * k] = 1j * mu[..., k]
        lambdas[..., 2 * k + 1] = -1j * mu[..., k]
    if n % 2:
        z = W[..., :, m]
        pivot = _first_significant(z, 1e-3)
        x = np.real(z * (np.abs(pivot) / pivot))
        x = x / np.linalg.norm(x, axis=-1, keepdims=True)
        thresh = 1e-12 * np.max(np.abs(x), axis=-1, keepdims=True)
        first = np.argmax(np.abs(x) > thresh, axis=-1)
        sign = np.sign(np.take_along_axis(x, first[..., None], axis=-1))
        Z[..., :, n - 1] = x * sign
        lambdas[..., n - 1] = 0.0

    X = np.empty(batch + (n, n))
    for k in range(m):
        X[..., :, 2 * k] = Z[..., :, 2 * k].real
        X[..., :, 2 * k + 1] = Z[..., :, 2 * k].imag
    if n % 2:
        X[..., :, n - 1] = Z[..., :, n - 1].real

    norms2 = np.einsum("...ai,...ab,...bi->...i", X, G, X)
    rho = 1.0 / norms2
    Y = X * np.sqrt(rho)[..., None, :]

    # eigen-equation check guards against a non-metric operator
    res = np.abs(M @ Z - Z * lambdas[..., None, :]).max(axis=(-1, -2))
    rel = res / np.maximum(1.0, scale)
    if np.any(rel > EIGEN_RESIDUAL_TOL):
        raise NonImaginaryEigenvalue(
            f"operator is not diagonalised by a purely imaginary spectrum (residual {float(np.max(rel)):.3g})",
            chart,
            _first(op.point, rel > EIGEN_RESIDUAL_TOL),
        )
    return SpectralFrame(np.asarray(op.point), lambdas, Z, X, Y, rho, mu, gap)


def _first_significant(z: np.ndarray, rel: float) -> np.ndarray:
    mag = np.abs(z)
    idx = np.argmax(mag > rel * mag.max(axis=-1, keepdims=True), axis=-1)
    return np.take_along_axis(z, idx[..., None], axis=-1)


def _first(point, mask):
    point = np.asarray(point)
    if point.ndim == 1:
        return point
    return point[mask][0]


# -- genericity --------------------------------------------------------------

def _chart_curvature(chart: Chart, points: np.ndarray):
    mj = metric_jet(chart, points)
    return mj, riemann(mj)


def _min_gap(mj, riem, xi1, xi2, gap_rel_tol, chart):
    op = curvature_operator(mj, riem, xi1, xi2, chart=chart)
    mu, gap = spectrum(mj.G, op.M)
    scale = np.max(mu, axis=-1) if mu.shape[-1] else np.zeros(gap.shape)
    rel_ok = gap > gap_rel_tol * scale
    ok = bool(np.all(rel_ok)) and bool(np.all(scale > 0))
    worst = int(np.argmin(gap))
    tol = gap_rel_tol * float(np.max(scale)) if scale.size else 0.0
    return ok, float(np.min(gap)), worst, tol


def check_genericity(chart: Chart, xi1, xi2, gap_rel_tol: float = GAP_REL_TOL, source="given", seed=None, points=None):
    """Certify a given (xi1, xi2) on the chart grid or raise NotGeneric."""
    pts = chart.grid() if points is None else points
    mj, riem = _chart_curvature(chart, pts)
    ok, gap, worst, tol = _min_gap(mj, riem, xi1, xi2, gap_rel_tol, chart.name)
    if not ok:
        raise NotGeneric(
            f"curvature operator has repeated eigenvalues (gap {gap:.3g})",
            chart.name,
            pts[worst],
            worst_gap=gap,
        )
    return GenericityCertificate(chart.name, np.asarray(xi1, float), np.asarray(xi2, float), gap, tol, seed, source, gap_rel_tol)


def probe_genericity(
    chart: Chart,
    trials: int = 64,
    seed: int = 0,
    gap_rel_tol: float = GAP_REL_TOL,
) -> GenericityCertificate:
    """Find constant vectors whose curvature operator has simple spectrum on the grid.

    Coordinate pairs are tried first in lexicographic order, then ``trials``
    random pairs with components uniform in [-1, 1].
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pts = chart.grid()
    if len(pts) == 0:
        raise NotGeneric("chart has no admissible grid points", chart.name)
    mj, riem = _chart_curvature(chart, pts)
    best = (-np.inf, 0)

    def candidates():
        for xi1, xi2 in coordinate_pairs(chart.dim):
            yield xi1, xi2, "coordinate-pair"
        rng = np.random.default_rng(seed)
        for _ in range(trials):
            yield rng.uniform(-1, 1, chart.dim), rng.uniform(-1, 1, chart.dim), "random"

    for xi1, xi2, source in candidates():
        ok, gap, worst, tol = _min_gap(mj, riem, xi1, xi2, gap_rel_tol, chart.name)
        if ok:
            return GenericityCertificate(chart.name, xi1, xi2, gap, tol, seed, source, gap_rel_tol)
        if gap > best[0]:
            best = (gap, worst)
    raise NotGeneric(
        f"no generic pair found after {trials} random trials (best worst-case gap {best[0]:.3g})",
        chart.name,
        pts[best[1]],
        worst_gap=float(best[0]),
    )


def frames_at(chart: Chart, cert: GenericityCertificate, points, check: bool = True) -> SpectralFrame:
    """Raw-gauge frames at arbitrary admissible points."""
    mj = metric_jet(chart, points, check=check)
    op = curvature_operator(mj, riemann(mj), cert.xi1, cert.xi2, chart=chart.name)
    return eigen_frame(op, mj, cert.gap_rel_tol, chart=chart.name)


# -- gauge alignment ---------------------------------------------------------

def gauge_align(Yref: np.ndarray, Gref: np.ndarray, Ynew: np.ndarray):
    """Rotate each plane of ``Ynew`` (and flip the kernel vector) to best match ``Yref``.

    Maximises the trace of ``Yref^T Gref Ynew`` plane by plane over SO(2), which
    keeps ``X_{2k-1} + i X_{2k}`` an eigenvector for the same eigenvalue.
    Returns the aligned frame and the rotation angles / signs applied.
    Works on batches.
    """
    n = Ynew.shape[-1]
    m = n // 2
    C = np.einsum("...ai,...ab,...bj->...ij", Yref, Gref, Ynew)
    out = Ynew.copy()
    thetas = np.empty(Ynew.shape[:-2] + (m,))
    for k in range(m):
        a, b = 2 * k, 2 * k + 1
        theta = np.arctan2(C[..., a, b] - C[..., b, a], C[..., a, a] + C[..., b, b])
        c, s = np.cos(theta)[..., None], np.sin(theta)[..., None]
        y1, y2 = Ynew[..., :, a], Ynew[..., :, b]
        out[..., :, a] = c * y1 + s * y2
        out[..., :, b] = -s * y1 + c * y2
        thetas[..., k] = theta
    sign = None
    if n % 2:
        sign = np.where(C[..., n - 1, n - 1] < 0, -1.0, 1.0)
        out[..., :, n - 1] *= sign[..., None]
    return out, thetas, sign


def overlap_diag(Yref, Gref, Y) -> np.ndarray:
    """Cosines between matching columns, measured in ``Gref``."""
    dot = np.einsum("...ai,...ab,...bi->...i", Yref, Gref, Y)
    nref = np.einsum("...ai,...ab,...bi->...i", Yref, Gref, Yref)
    nnew = np.einsum("...ai,...ab,...bi->...i", Y, Gref, Y)
    return dot / np.sqrt(nref * nnew)


def apply_gauge(frame: SpectralFrame, thetas: np.ndarray, sign) -> SpectralFrame:
    """Apply in-plane rotations (angles as returned by gauge_align) to every frame field."""
    n = frame.Y.shape[-1]
    X, Y, Z = frame.X.copy(), frame.Y.copy(), frame.Z.copy()
    for k in range(thetas.shape[-1]):
        a, b = 2 * k, 2 * k + 1
        c, s = np.cos(thetas[..., k])[..., None], np.sin(thetas[..., k])[..., None]
        for F in (X, Y):
            f1, f2 = F[..., :, a].copy(), F[..., :, b].copy()
            F[..., :, a] = c * f1 + s * f2
            F[..., :, b] = -s * f1 + c * f2
        phase = np.exp(-1j * thetas[..., k])[..., None]
        Z[..., :, a] = Z[..., :, a] * phase
        Z[..., :, b] = np.conj(Z[..., :, a])
    if sign is not None:
        for F in (X, Y, Z):
            F[..., :, n - 1] *= sign[..., None]
    return replace(frame, X=X, Y=Y, Z=Z)


def random_gauge(frame: SpectralFrame, rng: np.random.Generator) -> SpectralFrame:
    """Frame with random in-plane rotations and kernel sign (for gauge tests)."""
    batch = frame.Y.shape[:-2]
    n = frame.Y.shape[-1]
    thetas = rng.uniform(-np.pi, np.pi, batch + (n // 2,))
    sign = rng.choice([-1.0, 1.0], size=batch) if n % 2 else None
    return apply_gauge(frame, thetas, sign)


@dataclass(frozen=True)
class FrameField:
    """Aligned frames at the admissible grid points of a chart."""

    chart: Chart
    certificate: GenericityCertificate
    points: np.ndarray  # (N, n) row-major admissible lattice points
    lattice_index: np.ndarray  # (N, n) integer lattice coordinates
    frames: SpectralFrame  # batched over N
    G: np.ndarray  # (N, n, n)
    min_overlap: float
    continuity: float  # max |Y(p) - Y(q)| / |p - q| over adjacent pairs

    @property
    def n(self) -> int:
        return self.chart.dim

    def frame(self, idx: int) -> SpectralFrame:
        return self.frames[idx]

    def nearest(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        scaled = (pts[:, None, :] - self.points[None, :, :]) / self.chart.widths.clip(min=1e-300)
        return np.argmin(np.sum(scaled**2, axis=-1), axis=-1)

    def frame_at(self, points, check: bool = True) -> SpectralFrame:
        """Frames at arbitrary points, gauge-aligned to the nearest grid frame."""
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, self.n)
        raw = frames_at(self.chart, self.certificate, flat, check=check)
        ref = self.nearest(flat)
        _, thetas, sign = gauge_align(self.frames.Y[ref], self.G[ref], raw.Y)
        aligned = apply_gauge(raw, thetas, sign)
        ov = overlap_diag(self.frames.Y[ref], self.G[ref], aligned.Y)
        if np.any(ov.min(axis=-1) < ALIGN_MIN_OVERLAP):
            bad = int(np.argmin(ov.min(axis=-1)))
            raise AlignmentBreak(
                f"frame overlap {float(ov.min()):.3g} with nearest grid frame; eigenvalue order changes inside the chart",
                self.chart.name,
                flat[bad],
            )
        return SpectralFrame(*(a.reshape(points.shape[:-1] + a.shape[1:]) for a in (getattr(aligned, f) for f in _FRAME_FIELDS)))


def _lattice_coords(chart: Chart, points: np.ndarray) -> np.ndarray:
    lo = np.array([b[0] for b in chart.box])
    res = np.array(chart.grid_res)
    step = np.where(chart.widths > 0, chart.widths / np.maximum(res - 1, 1), 1.0)
    return np.rint((points - lo) / step).astype(int)


def _neighbors(index: np.ndarray):
    """Adjacency lists for lattice points at Chebyshev distance 1."""
    lookup = {tuple(v): i for i, v in enumerate(index)}
    n = index.shape[1]
    offsets = np.array(np.meshgrid(*[[-1, 0, 1]] * n, indexing="ij")).reshape(n, -1).T
    offsets = offsets[np.any(offsets != 0, axis=1)]
    adj = []
    for v in index:
        nb = [lookup[t] for t in map(tuple, v + offsets) if t in lookup]
        adj.append(sorted(nb))
    return adj


def align_frames(
    chart: Chart,
    certificate: GenericityCertificate,
    points: np.ndarray | None = None,
    gauge_seed: int | None = None,
) -> FrameField:
    """Extract and align frames over the chart grid.

    The sweep is a breadth-first traversal of the lattice adjacency graph
    rooted at the first admissible point in row-major order, neighbours
    visited in row-major order; every frame is aligned to the frame it was
    reached from. ``gauge_seed`` randomises the raw gauge before alignment.
    """
    pts = chart.grid() if points is None else np.asarray(points, dtype=float)
    lat = _lattice_coords(chart, pts)
    raw = frames_at(chart, certificate, pts)
    if gauge_seed is not None:
        raw = random_gauge(raw, np.random.default_rng(gauge_seed))
    G = metric_jet(chart, pts).G
    N = len(pts)
    adj = _neighbors(lat)

    Y = raw.Y.copy()
    thetas = np.zeros((N, chart.dim // 2))
    signs = np.ones(N)
    parent = np.full(N, -1)
    seen = np.zeros(N, dtype=bool)
    min_overlap = 1.0
    for root in range(N):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            q = queue.popleft()
            for p in adj[q]:
                if seen[p]:
                    continue
                seen[p] = True
                parent[p] = q
                aligned, th, sg = gauge_align(Y[q], G[q], raw.Y[p])
                ov = overlap_diag(Y[q], G[q], aligned)
                if ov.min() < ALIGN_MIN_OVERLAP:
                    raise AlignmentBreak(
                        f"frame overlap {float(ov.min()):.3g} between adjacent grid points; "
                        "eigenvalue order changes inside the chart, split it",
                        chart.name,
                        pts[p],
                    )
                min_overlap = min(min_overlap, float(ov.min()))
                Y[p] = aligned
                thetas[p] = th
                if sg is not None:
                    signs[p] = sg
                queue.append(p)

    frames = apply_gauge(raw, thetas, signs if chart.dim % 2 else None)
    # continuity witness over all adjacent pairs
    cont = 0.0
    pairs = np.array([(p, q) for p in range(N) for q in adj[p] if q > p], dtype=int).reshape(-1, 2)
    if len(pairs):
        P, Q = pairs[:, 0], pairs[:, 1]
        d = np.linalg.norm(pts[P] - pts[Q], axis=-1)
        jump = np.abs(frames.Y[P] - frames.Y[Q]).max(axis=(-1, -2))
        cont = float(np.max(jump / np.where(d > 0, d, np.inf)))
        ov = overlap_diag(frames.Y[Q], G[Q], frames.Y[P])
        min_overlap = min(min_overlap, float(ov.min()))
    if min_overlap < ALIGN_MIN_OVERLAP:
        raise AlignmentBreak(
            f"aligned frames disagree between adjacent points (overlap {min_overlap:.3g})",
            chart.name,
        )
    return FrameField(chart, certificate, pts, lat, frames, G, min_overlap, cont)
