"""Connection forms in the orthonormal frame and the induced block partition."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.cluster.hierarchy import DisjointSet

from .errors import AmbiguousPartition, BoundaryPoint
from .geometry import Chart, MetricJet, christoffel, metric_jet
from .spectral import FrameField, GenericityCertificate, align_frames, apply_gauge, frames_at, gauge_align

OMEGA_TOL = 1e-4
FD_STEP = 1e-4
MARGIN_RATIO = 10.0


def fd_steps(chart: Chart, fd_step: float) -> np.ndarray:
    """Per-axis finite-difference steps: ``fd_step`` in box-normalised units."""
    w = chart.widths
    return fd_step * np.where(w > 0, w, 1.0)


def stencil(points: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference stencil, shape (B, n, 2, n): [b, k, 0] = p + s_k e_k, [b, k, 1] = p - s_k e_k."""
    n = points.shape[-1]
    shift = np.eye(n) * steps[:, None]
    plus = points[:, None, :] + shift[None]
    minus = points[:, None, :] - shift[None]
    return np.stack([plus, minus], axis=2)


def interior_mask(chart: Chart, points: np.ndarray, fd_step: float) -> np.ndarray:
    """Points whose whole stencil lies in the chart."""
    points = np.atleast_2d(points)
    st = stencil(points, fd_steps(chart, fd_step))
    return chart.admissible(points) & np.all(chart.admissible(st), axis=(1, 2))


@dataclass(frozen=True)
class ConnectionFormSample:
    """``omega[..., i, j, k] = omega^i_j(d_k)`` at ``point``."""

    point: np.ndarray
    omega: np.ndarray

    def skewness(self) -> np.ndarray:
        return np.abs(self.omega + np.swapaxes(self.omega, -2, -3)).max(axis=(-1, -2, -3))

    def on_vector(self, v: np.ndarray) -> np.ndarray:
        """``omega^i_j(v)`` for a vector (or batch of vectors) ``v``."""
        return np.einsum("...ijk,...k->...ij", self.omega, v)


def connection_form(
    field: FrameField,
    points,
    fd_step: float = FD_STEP,
    mj: MetricJet | None = None,
) -> ConnectionFormSample:
    """Sample the connection form of the aligned frame at interior points.

    ``d_k Y`` comes from central differences of frames re-extracted at
    ``p +- s_k e_k`` and aligned to the centre frame; the Christoffel part is
    exact.
    """
    chart = field.chart
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = chart.dim
    steps = fd_steps(chart, fd_step)
    st = stencil(pts, steps)
    ok = np.all(chart.admissible(st), axis=(1, 2))
    if not np.all(ok):
        raise BoundaryPoint("finite-difference stencil leaves the chart", chart.name, pts[~ok][0])
    if mj is None:
        mj = metric_jet(chart, pts)
    centre = field.frame_at(pts)
    raw = frames_at(chart, field.certificate, st.reshape(-1, n))
    B = len(pts)
    Yc = np.repeat(centre.Y, 2 * n, axis=0)
    Gc = np.repeat(mj.G, 2 * n, axis=0)
    _, thetas, sign = gauge_align(Yc, Gc, raw.Y)
    Yst = apply_gauge(raw, thetas, sign).Y.reshape(B, n, 2, n, n)
    dY = (Yst[:, :, 0] - Yst[:, :, 1]) / (2 * steps[None, :, None, None])  # (B, k, a, j)
    gamma = christoffel(mj)  # (B, a, k, b)
    cov = dY + np.einsum("...akb,...bj->...kaj", gamma, centre.Y)
    omega = np.einsum("...ai,...ab,...kbj->...ijk", centre.Y, mj.G, cov)
    return ConnectionFormSample(pts if np.ndim(points) > 1 else pts[0], omega if np.ndim(points) > 1 else omega[0])


@dataclass(frozen=True)
class ChartPartition:
    """Blocks of frame indices.

    ``blocks`` and the evidence matrices use *display* frame indices;
    ``frame_order[d]`` is the column of the (mu-ordered) frame field that
    display index ``d`` refers to. Freshly built partitions use the identity.
    """

    chart: str
    related: np.ndarray  # bool (n, n): generators of the relation
    blocks: tuple[tuple[int, ...], ...]  # 0-based display indices
    max_omega: np.ndarray  # (n, n) evidence
    omega_tol: float
    below: float  # largest cross-plane evidence at or under the tolerance
    above: float  # smallest cross-plane evidence over the tolerance
    frame_order: tuple[int, ...] = dc_field(default=())

    def __post_init__(self):
        if not self.frame_order:
            object.__setattr__(self, "frame_order", tuple(range(len(self.related))))

    @property
    def beta(self) -> int:
        return len(self.blocks)

    def columns(self, i: int) -> tuple[int, ...]:
        """Frame-field columns of block ``i``."""
        return tuple(self.frame_order[d] for d in self.blocks[i])

    def block_of(self, j: int) -> int:
        for b, members in enumerate(self.blocks):
            if j in members:
                return b
        raise KeyError(j)

    def relabel(self, block_order) -> "ChartPartition":
        """Reorder blocks; display frame indices follow so each block is contiguous."""
        block_order = list(block_order)
        if sorted(block_order) != list(range(self.beta)):
            raise ValueError(f"{block_order} is not a permutation of the blocks")
        old = [d for i in block_order for d in self.blocks[i]]
        blocks, start = [], 0
        for i in block_order:
            size = len(self.blocks[i])
            blocks.append(tuple(range(start, start + size)))
            start += size
        ix = np.ix_(old, old)
        return ChartPartition(
            self.chart,
            self.related[ix],
            tuple(blocks),
            self.max_omega[ix],
            self.omega_tol,
            self.below,
            self.above,
            tuple(self.frame_order[d] for d in old),
        )


def _plane(j: int, n: int) -> int:
    """Plane index of frame index j (kernel vector gets its own)."""
    return j // 2 if j < 2 * (n // 2) else n // 2


def build_partition(
    field: FrameField,
    samples: ConnectionFormSample,
    omega_tol: float = OMEGA_TOL,
    margin_ratio: float = MARGIN_RATIO,
) -> ChartPartition:
    """Blocks of the equivalence relation generated by nonzero connection-form entries.

    Conjugate planes are always joined. Cross-plane evidence is checked for
    a clean separation around ``omega_tol``.
    """
    n = field.n
    omega = np.asarray(samples.omega).reshape(-1, n, n, n)
    ev = np.abs(omega).max(axis=(0, 3)) if len(omega) else np.zeros((n, n))
    ev = np.maximum(ev, ev.T)
    related = ev > omega_tol
    np.fill_diagonal(related, False)

    ds = DisjointSet(range(n))
    for k in range(n // 2):
        if np.all(field.frames.mu[..., k] > 0):
            ds.merge(2 * k, 2 * k + 1)
    for i, j in zip(*np.nonzero(related)):
        ds.merge(int(i), int(j))
    blocks = sorted(tuple(sorted(s)) for s in ds.subsets())

    cross = np.array([[_plane(i, n) != _plane(j, n) for j in range(n)] for i in range(n)])
    vals = ev[cross]
    lo = vals[vals <= omega_tol]
    hi = vals[vals > omega_tol]
    below = float(lo.max()) if lo.size else 0.0
    above = float(hi.min()) if hi.size else float("inf")
    if lo.size and hi.size and above < margin_ratio * below:
        raise AmbiguousPartition(
            f"connection-form evidence not separated: {below:.3g} (below tolerance) vs {above:.3g} (above); "
            f"refine the grid or adjust omega_tol",
            field.chart.name,
        )
    return ChartPartition(field.chart.name, related, tuple(blocks), ev, omega_tol, below, above)


@dataclass(frozen=True)
class LocalBasisTensor:
    """``h_i(U) = sum_{j in block} Y_j (x) Y_j`` on one chart."""

    chart: str
    index: int
    members: tuple[int, ...]  # display indices
    columns: tuple[int, ...]  # frame-field columns
    field: FrameField

    def frame_columns(self, points) -> np.ndarray:
        """Basis of the block's subspace (G-orthonormal columns), shape (..., n, |block|)."""
        Y = self.field.frame_at(points).Y
        return Y[..., list(self.columns)]

    subspace = frame_columns

    def __call__(self, points) -> np.ndarray:
        """Contravariant components at ``points``."""
        B = self.frame_columns(points)
        return B @ np.swapaxes(B, -1, -2)


def local_basis(field: FrameField, partition: ChartPartition) -> list[LocalBasisTensor]:
    return [
        LocalBasisTensor(partition.chart, i, members, partition.columns(i), field)
        for i, members in enumerate(partition.blocks)
    ]


def sample_connection_forms(field: FrameField, fd_step: float = FD_STEP) -> ConnectionFormSample:
    """Connection form at every interior grid point of the field."""
    mask = interior_mask(field.chart, field.points, fd_step)
    pts = field.points[mask]
    if len(pts) == 0:
        n = field.n
        return ConnectionFormSample(np.zeros((0, n)), np.zeros((0, n, n, n)))
    return connection_form(field, pts, fd_step)


@dataclass(frozen=True)
class ChartAnalysis:
    """Everything computed for one chart before gluing."""

    chart: Chart
    field: FrameField
    samples: ConnectionFormSample
    partition: ChartPartition
    bases: list

    @property
    def name(self) -> str:
        return self.chart.name

    def relabel(self, block_order) -> "ChartAnalysis":
        part = self.partition.relabel(block_order)
        return ChartAnalysis(self.chart, self.field, self.samples, part, local_basis(self.field, part))


def analyze_chart(
    chart: Chart,
    certificate: GenericityCertificate,
    omega_tol: float = OMEGA_TOL,
    fd_step: float = FD_STEP,
    gauge_seed: int | None = None,
    points: np.ndarray | None = None,
) -> ChartAnalysis:
    """Frames, connection-form samples, partition and local tensors for a chart."""
    field = align_frames(chart, certificate, points=points, gauge_seed=gauge_seed)
    samples = sample_connection_forms(field, fd_step)
    partition = build_partition(field, samples, omega_tol)
    return ChartAnalysis(chart, field, samples, partition, local_basis(field, partition))
