"""Gluing local block decompositions across chart overlaps."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import networkx as nx
from scipy.cluster.hierarchy import DisjointSet

from .errors import (
    AmbiguousIntersection,
    BlockMissingOnChart,
    DisconnectedAtlas,
    NotGeneric,
    OverlapNotConnected,
    RefinementMismatch,
    WellDefinednessViolation,
)
from .geometry import Chart, metric_jet
from .partition import FD_STEP, OMEGA_TOL, ChartAnalysis, ChartPartition, analyze_chart, local_basis
from .spectral import _lattice_coords, _neighbors, check_genericity, probe_genericity

INTERSECTION_TOL = 1e-6
AMBIGUITY_BAND = (0.1, 1 - 1e-3)
REFINEMENT_COEFF_TOL = 1e-6
REFINEMENT_VALUE_TOL = 1e-8
H_AGREE_TOL = 1e-8
SUBSPACE_AGREE_TOL = 1e-6


# -- overlaps ----------------------------------------------------------------

def overlap_box(U: Chart, V: Chart):
    box = tuple((max(a[0], b[0]), min(a[1], b[1])) for a, b in zip(U.box, V.box))
    if any(lo > hi for lo, hi in box):
        return None
    return box


def overlap_chart(U: Chart, V: Chart) -> Chart | None:
    """The overlap as a chart of its own (box intersection, both constraint sets)."""
    if U.coord_names != V.coord_names:
        raise ValueError("charts use different coordinate systems")
    box = overlap_box(U, V)
    if box is None:
        return None
    res = tuple(max(a, b) for a, b in zip(U.grid_res, V.grid_res))
    text = None
    if U.constraint_text is not None and V.constraint_text is not None:
        text = U.constraint_text + V.constraint_text
    return Chart(
        name=f"{U.name}&{V.name}",
        coord_names=U.coord_names,
        box=box,
        g_cov=U.g_cov,
        grid_res=res,
        constraints=U.constraints + V.constraints,
        metric_text=U.metric_text,
        constraint_text=text,
    )


def overlap_region(U: Chart, V: Chart) -> np.ndarray:
    """Lattice points of the box intersection admissible for both charts."""
    W = overlap_chart(U, V)
    if W is None:
        return np.zeros((0, U.dim))
    pts = W.lattice()
    return pts[U.admissible(pts) & V.admissible(pts)]


def lattice_connected(chart: Chart, points: np.ndarray) -> bool:
    if len(points) <= 1:
        return True
    adj = _neighbors(_lattice_coords(chart, points))
    g = nx.Graph()
    g.add_nodes_from(range(len(points)))
    g.add_edges_from((p, q) for p, nb in enumerate(adj) for q in nb)
    return nx.is_connected(g)


# -- subspaces ---------------------------------------------------------------

def intersection_singular_values(basisA: np.ndarray, basisB: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Cosines of the principal angles between two G-orthonormal bases (batched)."""
    C = np.swapaxes(basisA, -1, -2) @ G @ basisB
    if C.shape[-1] == 0 or C.shape[-2] == 0:
        return np.zeros(C.shape[:-2] + (0,))
    return np.linalg.svd(C, compute_uv=False)


def subspace_intersection_dim(basisA, basisB, G, tol: float = INTERSECTION_TOL) -> int:
    """Dimension of the numerical intersection: singular values above ``1 - tol``."""
    s = intersection_singular_values(np.asarray(basisA, float), np.asarray(basisB, float), np.asarray(G, float))
    return int(np.sum(s > 1 - tol))


# -- gluing ------------------------------------------------------------------

@dataclass(frozen=True)
class OverlapEvidence:
    charts: tuple[int, int]
    n_points: int
    # dims[i][j] = max intersection dim of block i of the first chart and block j of the second
    dims: np.ndarray
    max_non_intersecting: float  # largest cosine not counted as an intersection


@dataclass(frozen=True)
class AtlasIndex:
    chart_names: tuple[str, ...]
    betas: tuple[int, ...]
    # each block: sorted tuple of (chart index, local block index), 0-based
    blocks: tuple[tuple[tuple[int, int], ...], ...]
    overlaps: tuple[OverlapEvidence, ...]

    @property
    def A(self) -> int:
        return len(self.blocks)

    def label(self, chart: int, block: int) -> int:
        for a, members in enumerate(self.blocks):
            if (chart, block) in members:
                return a
        raise KeyError((chart, block))

    def members_on(self, a: int, chart: int) -> list[int]:
        return [i for c, i in self.blocks[a] if c == chart]


def glue(
    charts: list[Chart],
    partitions: list[ChartPartition],
    local_bases: list[list],
    intersection_tol: float = INTERSECTION_TOL,
) -> AtlasIndex:
    """Join (block, chart) pairs whose subspaces meet on a chart overlap."""
    names = tuple(c.name for c in charts)
    ds = DisjointSet([(c, i) for c, p in enumerate(partitions) for i in range(p.beta)])
    adjacency = nx.Graph()
    adjacency.add_nodes_from(range(len(charts)))
    evidence = []
    for u, v in combinations(range(len(charts)), 2):
        U, V = charts[u], charts[v]
        pts = overlap_region(U, V)
        if len(pts) == 0:
            continue
        if not lattice_connected(overlap_chart(U, V), pts):
            raise OverlapNotConnected(f"overlap of {U.name!r} and {V.name!r} is not connected at grid resolution", U.name)
        adjacency.add_edge(u, v)
        G = metric_jet(U, pts).G
        dims = np.zeros((partitions[u].beta, partitions[v].beta), dtype=int)
        worst = 0.0
        colsU = [b.frame_columns(pts) for b in local_bases[u]]
        colsV = [b.frame_columns(pts) for b in local_bases[v]]
        for i, A_ in enumerate(colsU):
            for j, B_ in enumerate(colsV):
                s = intersection_singular_values(A_, B_, G)
                d = np.sum(s > 1 - intersection_tol, axis=-1)
                dims[i, j] = int(d.max()) if d.size else 0
                rest = s[s <= 1 - intersection_tol]
                if rest.size:
                    worst = max(worst, float(rest.max()))
                amb = s[(s > AMBIGUITY_BAND[0]) & (s < AMBIGUITY_BAND[1])]
                if amb.size:
                    k = int(np.argmax(np.any((s > AMBIGUITY_BAND[0]) & (s < AMBIGUITY_BAND[1]), axis=-1)))
                    raise AmbiguousIntersection(
                        f"subspaces of block {i + 1} on {U.name!r} and block {j + 1} on {V.name!r} "
                        f"meet at principal-angle cosine {float(amb.max()):.4g}",
                        U.name,
                        pts[k],
                    )
                if dims[i, j] > 0:
                    ds.merge((u, i), (v, j))
        evidence.append(OverlapEvidence((u, v), len(pts), dims, worst))

    if not nx.is_connected(adjacency):
        parts = [sorted(names[c] for c in comp) for comp in nx.connected_components(adjacency)]
        raise DisconnectedAtlas(f"charts do not form a connected atlas: {parts}")

    blocks = sorted(tuple(sorted(s)) for s in ds.subsets())
    for a, members in enumerate(blocks):
        present = {c for c, _ in members}
        for c in range(len(charts)):
            if c not in present:
                raise BlockMissingOnChart(
                    f"global block {a + 1} has no local block on this chart; tolerances are inconsistent",
                    names[c],
                )
    return AtlasIndex(names, tuple(p.beta for p in partitions), tuple(blocks), tuple(evidence))


def canonicalize(analyses: list[ChartAnalysis], index: AtlasIndex):
    """Renumber local blocks so they follow the global block order on every chart.

    Returns relabelled analyses and the matching index. Frame indices follow
    the blocks, so block ``i`` of every chart covers a contiguous index range.
    """
    new_analyses = []
    mapping = {}
    for c, an in enumerate(analyses):
        order = sorted(range(an.partition.beta), key=lambda i: (index.label(c, i), i))
        new_analyses.append(an.relabel(order))
        for new, old in enumerate(order):
            mapping[(c, old)] = (c, new)
    blocks = sorted(tuple(sorted(mapping[m] for m in members)) for members in index.blocks)
    overlaps = []
    for ev in index.overlaps:
        u, v = ev.charts
        ou = _old_order(mapping, u, index.betas[u])
        ov = _old_order(mapping, v, index.betas[v])
        overlaps.append(OverlapEvidence(ev.charts, ev.n_points, ev.dims[np.ix_(ou, ov)], ev.max_non_intersecting))
    return new_analyses, AtlasIndex(index.chart_names, index.betas, tuple(blocks), tuple(overlaps))


def _old_order(mapping, chart, beta):
    inv = {new: old for (c, old), (_, new) in mapping.items() if c == chart}
    return [inv[i] for i in range(beta)]


# -- refinement on overlaps -------------------------------------------------

@dataclass(frozen=True)
class OverlapRefinement:
    charts: tuple[str, str]
    points: np.ndarray
    overlap_partition: ChartPartition
    gamma_U: tuple[tuple[int, ...], ...]  # overlap blocks making up each block of U
    gamma_V: tuple[tuple[int, ...], ...]
    coeffs_U: np.ndarray  # (beta(U), beta(W))
    coeffs_V: np.ndarray
    intersection_dims: np.ndarray  # (beta(U), beta(V))
    max_value_error: float


def _is_partition(groups, size) -> bool:
    flat = sorted(q for g in groups for q in g)
    return flat == list(range(size))


def _refine(an: ChartAnalysis, w_bases, pts, label):
    Hw = np.stack([b(pts) for b in w_bases], axis=-1)  # (P, n, n, beta_W)
    A = Hw.reshape(-1, Hw.shape[-1])
    coeffs = []
    err = 0.0
    for b in an.bases:
        target = b(pts)
        c, *_ = np.linalg.lstsq(A, target.ravel(), rcond=None)
        coeffs.append(c)
    coeffs = np.array(coeffs)
    rounded = np.rint(coeffs)
    off = np.abs(coeffs - rounded)
    bad = (off > REFINEMENT_COEFF_TOL) | ((rounded != 0) & (rounded != 1))
    if np.any(bad):
        i, q = np.argwhere(bad)[0]
        raise RefinementMismatch(
            f"block {i + 1} of {label!r} is not a sum of overlap blocks (coefficient {coeffs[i, q]:.6g} for overlap block {q + 1})",
            label,
        )
    gamma = tuple(tuple(int(q) for q in np.nonzero(rounded[i] == 1)[0]) for i in range(len(coeffs)))
    if not _is_partition(gamma, Hw.shape[-1]):
        raise RefinementMismatch(f"overlap blocks are not partitioned by the blocks of {label!r}: {gamma}", label)
    for i, b in enumerate(an.bases):
        recon = Hw[..., list(gamma[i])].sum(axis=-1)
        err = max(err, float(np.abs(recon - b(pts)).max()))
    if err > REFINEMENT_VALUE_TOL:
        raise RefinementMismatch(f"overlap blocks reproduce the blocks of {label!r} only to {err:.3g}", label)
    return coeffs, gamma, err


def check_refinement(
    U: ChartAnalysis,
    V: ChartAnalysis,
    omega_tol: float = OMEGA_TOL,
    fd_step: float = FD_STEP,
    seed: int = 0,
    trials: int = 64,
    overlap_partition: ChartPartition | None = None,
) -> OverlapRefinement:
    """Decompose the overlap as a chart of its own and match its blocks to both sides.

    Every block of U (and of V) must be the sum of a set of overlap blocks
    with unit coefficients, and those sets must partition the overlap blocks.
    ``overlap_partition`` replaces the computed overlap partition (testing).
    """
    W = overlap_chart(U.chart, V.chart)
    pts = overlap_region(U.chart, V.chart)
    if W is None or len(pts) == 0:
        raise ValueError(f"charts {U.name!r} and {V.name!r} do not overlap")
    cert = None
    for an in (U, V):
        try:
            cert = check_genericity(W, an.field.certificate.xi1, an.field.certificate.xi2,
                                    an.field.certificate.gap_rel_tol, source=f"from {an.name}")
            break
        except NotGeneric:
            continue
    if cert is None:
        cert = probe_genericity(W, trials, seed)
    wa = analyze_chart(W, cert, omega_tol, fd_step, points=pts)
    if overlap_partition is not None:
        wa = ChartAnalysis(W, wa.field, wa.samples, overlap_partition, local_basis(wa.field, overlap_partition))
    cU, gU, eU = _refine(U, wa.bases, pts, U.name)
    cV, gV, eV = _refine(V, wa.bases, pts, V.name)
    dims = np.zeros((U.partition.beta, V.partition.beta), dtype=int)
    for i, gi in enumerate(gU):
        for j, gj in enumerate(gV):
            dims[i, j] = sum(len(wa.partition.blocks[q]) for q in set(gi) & set(gj))
    return OverlapRefinement((U.name, V.name), pts, wa.partition, gU, gV, cU, cV, dims, max(eU, eV))


# -- global tensors ----------------------------------------------------------

@dataclass(frozen=True)
class ParallelBasis:
    """The global blocks and per-chart evaluators of the tensors ``h_a``."""

    analyses: tuple[ChartAnalysis, ...]
    index: AtlasIndex

    @property
    def A(self) -> int:
        return self.index.A

    @property
    def n(self) -> int:
        return self.analyses[0].chart.dim

    def chart_index(self, name: str) -> int:
        for c, an in enumerate(self.analyses):
            if an.name == name:
                return c
        raise KeyError(name)

    def columns(self, a: int, chart: int) -> list[int]:
        part = self.analyses[chart].partition
        return [col for i in self.index.members_on(a, chart) for col in part.columns(i)]

    def subspace(self, a: int, chart: int, points) -> np.ndarray:
        """G-orthonormal basis of the distribution of block ``a`` (0-based)."""
        Y = self.analyses[chart].field.frame_at(points).Y
        return Y[..., self.columns(a, chart)]

    def frames(self, chart: int, points):
        return self.analyses[chart].field.frame_at(points)

    def h(self, a: int, chart: int, points) -> np.ndarray:
        """Contravariant components of ``h_a`` at points of a chart."""
        B = self.subspace(a, chart, points)
        return B @ np.swapaxes(B, -1, -2)

    def h_all(self, chart: int, points) -> np.ndarray:
        """All ``h_a`` from one frame evaluation, shape (A, ..., n, n)."""
        Y = self.frames(chart, points).Y
        out = []
        for a in range(self.A):
            B = Y[..., self.columns(a, chart)]
            out.append(B @ np.swapaxes(B, -1, -2))
        return np.stack(out)

    def h_cov(self, a: int, chart: int, points) -> np.ndarray:
        G = metric_jet(self.analyses[chart].chart, points).G
        return G @ self.h(a, chart, points) @ G


def global_distributions(index: AtlasIndex, analyses: list[ChartAnalysis]) -> ParallelBasis:
    """Per-chart evaluators for the global tensors, checked for agreement on overlaps."""
    basis = ParallelBasis(tuple(analyses), index)
    for ev in index.overlaps:
        u, v = ev.charts
        U, V = analyses[u].chart, analyses[v].chart
        pts = overlap_region(U, V)
        G = metric_jet(U, pts).G
        for a in range(index.A):
            hu, hv = basis.h(a, u, pts), basis.h(a, v, pts)
            diff = np.abs(hu - hv).max(axis=(-1, -2))
            Pu, Pv = hu @ G, hv @ G
            dist = np.abs(Pu - Pv).max(axis=(-1, -2))
            bad = (diff > H_AGREE_TOL * np.maximum(1.0, np.abs(hu).max(axis=(-1, -2)))) | (dist > SUBSPACE_AGREE_TOL)
            if np.any(bad):
                k = int(np.argmax(bad))
                raise WellDefinednessViolation(
                    f"block {a + 1} differs between {U.name!r} and {V.name!r} "
                    f"(tensor difference {float(diff[k]):.3g}, projector distance {float(dist[k]):.3g})",
                    U.name,
                    pts[k],
                )
    return basis
