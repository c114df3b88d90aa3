"""End-to-end decomposition: spec file in, JSON-ready report out."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BadBlockIndex, SpecError
from .geometry import metric_jet
from .glue import (
    AtlasIndex,
    OverlapRefinement,
    ParallelBasis,
    canonicalize,
    check_refinement,
    global_distributions,
    glue,
)
from .partition import ChartAnalysis, analyze_chart
from .specfile import ManifoldSpec, load, loads
from .spectral import GenericityCertificate, check_genericity, frames_at, probe_genericity
from .verify import CertificationSummary, certify

REPORT_SCHEMA = "parallel-metrics-report/1"


@dataclass(frozen=True)
class Decomposition:
    spec: ManifoldSpec
    certificates: tuple[GenericityCertificate, ...]
    analyses: tuple[ChartAnalysis, ...]
    index: AtlasIndex
    refinements: tuple[OverlapRefinement, ...]
    basis: ParallelBasis

    @property
    def A(self) -> int:
        return self.index.A


def chart_certificate(chart, spec: ManifoldSpec, seed: int) -> GenericityCertificate:
    tol = spec.tolerances.gap_tol
    if chart.xi1 is not None:
        return check_genericity(chart, chart.xi1, chart.xi2, tol, source="given")
    return probe_genericity(chart, spec.probe_trials, seed, tol)


def decompose(spec: ManifoldSpec, seed: int | None = None, gauge_seed: int | None = None) -> Decomposition:
    """Certificates, frames, partitions, gluing and the global tensors."""
    seed = spec.seed if seed is None else seed
    tol = spec.tolerances
    certs = [chart_certificate(c, spec, seed) for c in spec.charts]
    analyses = [
        analyze_chart(c, cert, tol.omega_tol, tol.fd_step, gauge_seed=gauge_seed)
        for c, cert in zip(spec.charts, certs)
    ]
    index = glue(list(spec.charts), [a.partition for a in analyses], [a.bases for a in analyses], tol.intersection_tol)
    analyses, index = canonicalize(analyses, index)
    refinements = tuple(
        check_refinement(analyses[ev.charts[0]], analyses[ev.charts[1]], tol.omega_tol, tol.fd_step, seed,
                         spec.probe_trials)
        for ev in index.overlaps
    )
    basis = global_distributions(index, analyses)
    return Decomposition(spec, tuple(certs), tuple(analyses), index, refinements, basis)


# -- report ------------------------------------------------------------------

def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _chart_entry(c: int, d: Decomposition) -> dict:
    an, cert = d.analyses[c], d.certificates[c]
    part, field = an.partition, an.field
    skew = an.samples.skewness()
    return {
        "name": an.name,
        "box": [list(b) for b in an.chart.box],
        "grid_res": list(an.chart.grid_res),
        "n_grid_points": int(len(field.points)),
        "n_omega_samples": int(len(an.samples.omega)),
        "certificate": {
            "xi1": _floats(cert.xi1),
            "xi2": _floats(cert.xi2),
            "source": cert.source,
            "min_eigengap": float(cert.min_eigengap),
            "gap_tol": float(cert.gap_tol),
        },
        "frequencies": _floats(field.frames.mu),
        "alignment": {"min_overlap": float(field.min_overlap), "continuity": float(field.continuity)},
        "partition": {
            "blocks": [[i + 1 for i in b] for b in part.blocks],
            "frame_order": [i + 1 for i in part.frame_order],
            "omega_evidence": _floats(part.max_omega),
            "omega_tol": part.omega_tol,
            "largest_below_tol": part.below,
            "smallest_above_tol": None if np.isinf(part.above) else part.above,
            "omega_max_skewness": float(skew.max()) if skew.size else 0.0,
        },
        "frame_columns": [[j + 1 for j in d.basis.columns(a, c)] for a in range(d.A)],
    }


def _basis_entry(c: int, d: Decomposition) -> dict:
    an = d.analyses[c]
    pts = an.field.points
    H = d.basis.h_all(c, pts)
    G = an.field.G
    return {
        "chart": an.name,
        "points": _floats(pts),
        "h_contravariant": _floats(H),
        "h_covariant": _floats(G[None] @ H @ G[None]),
    }


def _refinement_entry(r: OverlapRefinement) -> dict:
    return {
        "charts": list(r.charts),
        "n_points": int(len(r.points)),
        "overlap_blocks": [[i + 1 for i in b] for b in r.overlap_partition.blocks],
        "gamma": [[[q + 1 for q in g] for g in r.gamma_U], [[q + 1 for q in g] for g in r.gamma_V]],
        "coefficients": [_floats(r.coeffs_U), _floats(r.coeffs_V)],
        "intersection_dims": r.intersection_dims.tolist(),
        "max_value_error": r.max_value_error,
    }


def _certification_entry(s: CertificationSummary) -> dict:
    return {
        "passed": True,
        "dimension": s.A,
        "parallel_tol": s.parallel_tol,
        "fd_step": s.fd_step,
        "trials": s.trials,
        "seed": s.seed,
        "coefficients": s.coefficients,
        "max_basis_residual": s.basis_max_residual,
        "min_control_residual": None if np.isinf(s.control_min_residual) else s.control_min_residual,
        "separation": None if np.isinf(s.separation) else s.separation,
        "charts": [
            {
                "chart": c.chart,
                "n_points": c.n_points,
                "metric_residual": c.metric_residual,
                "block_residuals": c.basis_residuals,
                "combination_residual": c.assembled_residual,
                "controls": c.control_residuals,
            }
            for c in s.charts
        ],
    }


def build_report(d: Decomposition, cert: CertificationSummary, seed: int) -> dict:
    spec, index = d.spec, d.index
    names = index.chart_names
    return {
        "schema": REPORT_SCHEMA,
        "status": "ok",
        "exit_code": 0,
        "spec": {"sha256": spec.sha256, "text": spec.text},
        "seed": seed,
        "trials": spec.trials,
        "tolerances": asdict(spec.tolerances),
        "coordinates": list(spec.coordinates),
        "charts": [_chart_entry(c, d) for c in range(len(d.analyses))],
        "A": index.A,
        "blocks": [[{"chart": names[c], "block": i + 1} for c, i in members] for members in index.blocks],
        "overlaps": [
            {
                "charts": [names[ev.charts[0]], names[ev.charts[1]]],
                "n_points": ev.n_points,
                "intersection_dims": ev.dims.tolist(),
                "max_non_intersecting_cosine": ev.max_non_intersecting,
                "note": "intersections are tested at overlap grid points only",
            }
            for ev in index.overlaps
        ],
        "refinements": [_refinement_entry(r) for r in d.refinements],
        "basis": [_basis_entry(c, d) for c in range(len(d.analyses))],
        "certification": _certification_entry(cert),
    }


def error_report(exc: BaseException) -> dict:
    code = getattr(exc, "exit_code", 4)
    return {
        "schema": REPORT_SCHEMA,
        "status": "error",
        "exit_code": code,
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "chart": getattr(exc, "chart", None),
            "point": getattr(exc, "point", None),
        },
    }


def run_spec(spec: ManifoldSpec, seed: int | None = None, grid_res: int | None = None) -> dict:
    if grid_res is not None:
        spec = spec.with_grid_res(grid_res)
    seed = spec.seed if seed is None else seed
    d = decompose(spec, seed)
    tol = spec.tolerances
    summary = certify(d.basis, spec.trials, seed, tol.parallel_tol, tol.fd_step)
    return build_report(d, summary, seed)


def run(spec_path, seed: int | None = None, grid_res: int | None = None) -> dict:
    """Steps 1 to 7 on a spec file; raises ParallelMetricsError subclasses on failure."""
    return run_spec(load(spec_path), seed, grid_res)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, allow_nan=False) + "\n"


# -- evaluation from a report -----------------------------------------------

def evaluate(report: dict, block: int, chart: str, point, spec_text: str | None = None):
    """``h_a`` (1-based ``block``) at ``point`` of a chart; returns (contravariant, covariant).

    The frame is recomputed from the spec with the recorded constant vectors;
    ``h_a`` does not depend on the frame gauge, so no alignment is needed.
    """
    if report.get("status") != "ok":
        raise SpecError("report does not describe a successful run")
    text = report["spec"]["text"] if spec_text is None else spec_text
    spec = loads(text)
    if spec.sha256 != report["spec"]["sha256"]:
        raise SpecError("spec file does not match the hash recorded in the report")
    A = report["A"]
    if not isinstance(block, int) or not 1 <= block <= A:
        raise BadBlockIndex(f"block index {block} out of range 1..{A}")
    entries = {c["name"]: c for c in report["charts"]}
    if chart not in entries:
        raise SpecError(f"unknown chart {chart!r}; report has {sorted(entries)}")
    entry = entries[chart]
    ch = spec.chart(chart)
    pt = np.asarray(point, dtype=float)
    if pt.shape != (ch.dim,):
        raise SpecError(f"point needs {ch.dim} coordinates, got {pt.size}")
    c = entry["certificate"]
    cert = GenericityCertificate(chart, np.array(c["xi1"]), np.array(c["xi2"]), c["min_eigengap"], c["gap_tol"],
                                 None, c["source"], spec.tolerances.gap_tol)
    mj = metric_jet(ch, pt)
    Y = frames_at(ch, cert, pt).Y
    cols = [j - 1 for j in entry["frame_columns"][block - 1]]
    B = Y[:, cols]
    h = B @ B.T
    return h, mj.G @ h @ mj.G

