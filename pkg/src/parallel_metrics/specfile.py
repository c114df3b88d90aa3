"""Reading and writing manifold spec files (TOML)."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import tomli
import tomli_w

from .errors import ExprSyntaxError, SpecError
from .expr import parse
from .geometry import Chart

SCHEMA = 1


@dataclass(frozen=True)
class Tolerances:
    gap_tol: float = 1e-6  # relative to the spectral radius
    omega_tol: float = 1e-4
    parallel_tol: float = 1e-5
    fd_step: float = 1e-4  # box-normalised
    intersection_tol: float = 1e-6

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise SpecError(f"tolerance {k} must be positive, got {v}")


@dataclass(frozen=True)
class ManifoldSpec:
    coordinates: tuple[str, ...]
    charts: tuple[Chart, ...]
    tolerances: Tolerances = field(default_factory=Tolerances)
    seed: int = 0
    trials: int = 20
    probe_trials: int = 64
    text: str = field(default="", compare=False)

    @property
    def dimension(self) -> int:
        return len(self.coordinates)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def chart(self, name: str) -> Chart:
        for c in self.charts:
            if c.name == name:
                return c
        raise KeyError(name)

    def with_grid_res(self, res: int) -> "ManifoldSpec":
        if res < 3:
            raise SpecError(f"grid_res must be >= 3, got {res}")
        charts = tuple(replace(c, grid_res=(res,) * c.dim) for c in self.charts)
        return replace(self, charts=charts)


def _expr(text, coords, where):
    if not isinstance(text, str):
        text = repr(text) if isinstance(text, (int, float)) else text
    if not isinstance(text, str):
        raise SpecError(f"{where}: expected an expression string, got {text!r}")
    try:
        return parse(text, coords)
    except ExprSyntaxError as e:
        raise SpecError(f"{where}: {e.msg} at byte {e.offset} in {text!r}") from e


def _metric(rows, coords, where):
    n = len(coords)
    if not isinstance(rows, list) or len(rows) != n:
        raise SpecError(f"{where}: metric needs {n} rows (lower triangle)")
    text, ast = [], []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != i + 1:
            raise SpecError(f"{where}: metric row {i + 1} needs {i + 1} entries")
        row = [str(v) if isinstance(v, (int, float)) else v for v in row]
        text.append(tuple(row))
        ast.append(tuple(_expr(v, coords, f"{where} metric[{i + 1}][{j + 1}]") for j, v in enumerate(row)))
    return tuple(text), tuple(ast)


def _vector(v, n, where):
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != n or not all(isinstance(x, (int, float)) for x in v):
        raise SpecError(f"{where}: expected {n} numbers")
    return tuple(float(x) for x in v)


def loads(text: str) -> ManifoldSpec:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise SpecError(f"spec file is not valid TOML: {e}") from e
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise SpecError(f"unsupported spec schema {schema!r} (expected {SCHEMA})")
    coords = doc.get("coordinates")
    if not isinstance(coords, list) or not coords or not all(isinstance(c, str) for c in coords):
        raise SpecError("'coordinates' must be a non-empty list of names")
    coords = tuple(coords)
    if len(set(coords)) != len(coords):
        raise SpecError(f"duplicate coordinate names in {list(coords)}")
    n = len(coords)
    if doc.get("dimension", n) != n:
        raise SpecError(f"dimension {doc['dimension']} does not match {n} coordinates")

    tol = doc.get("tolerances", {})
    unknown = set(tol) - set(Tolerances.__dataclass_fields__)
    if unknown:
        raise SpecError(f"unknown tolerances: {sorted(unknown)}")
    tolerances = Tolerances(**{k: float(v) for k, v in tol.items()})

    default_metric = doc.get("metric")
    raw_charts = doc.get("charts")
    if not isinstance(raw_charts, list) or not raw_charts:
        raise SpecError("spec needs at least one [[charts]] entry")
    charts, names = [], set()
    for k, rc in enumerate(raw_charts):
        name = rc.get("name", f"chart{k + 1}")
        where = f"chart {name!r}"
        if name in names:
            raise SpecError(f"{where}: duplicate chart name")
        names.add(name)
        box = rc.get("box")
        if not isinstance(box, list) or len(box) != n or any(not isinstance(b, list) or len(b) != 2 for b in box):
            raise SpecError(f"{where}: box needs {n} [lo, hi] pairs")
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        res = rc.get("grid_res", 5)
        res = (res,) * n if isinstance(res, int) else res
        if not isinstance(res, (list, tuple)) or len(res) != n or any(not isinstance(r, int) or r < 3 for r in res):
            raise SpecError(f"{where}: grid_res must be an integer >= 3 or a list of {n} of them")
        cons_text = tuple(rc.get("constraints", []))
        cons = tuple(_expr(c, coords, f"{where} constraint") for c in cons_text)
        rows = rc.get("metric", default_metric)
        if rows is None:
            raise SpecError(f"{where}: no metric given and no top-level default")
        metric_text, g = _metric(rows, coords, where)
        xi1 = _vector(rc.get("xi1"), n, f"{where} xi1")
        xi2 = _vector(rc.get("xi2"), n, f"{where} xi2")
        if (xi1 is None) != (xi2 is None):
            raise SpecError(f"{where}: give both xi1 and xi2 or neither")
        try:
            charts.append(
                Chart(name, coords, box, g, tuple(res), cons, xi1, xi2,
                      metric_text=metric_text, constraint_text=cons_text)
            )
        except ValueError as e:
            raise SpecError(str(e)) from e

    seed = doc.get("seed", 0)
    trials = doc.get("trials", 20)
    probe_trials = doc.get("probe_trials", 64)
    for key, v in (("seed", seed), ("trials", trials), ("probe_trials", probe_trials)):
        if not isinstance(v, int) or v < 0:
            raise SpecError(f"{key} must be a non-negative integer")
    if probe_trials < 1:
        raise SpecError("probe_trials must be >= 1")
    return ManifoldSpec(coords, tuple(charts), tolerances, seed, trials, probe_trials, text)


def load(path) -> ManifoldSpec:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SpecError(f"cannot read spec file {str(path)!r}: {e.strerror}") from e
    return loads(text)


def to_dict(spec: ManifoldSpec) -> dict:
    charts = []
    for c in spec.charts:
        entry = {"name": c.name, "box": [list(b) for b in c.box], "grid_res": list(c.grid_res)}
        if c.constraint_text:
            entry["constraints"] = list(c.constraint_text)
        if c.xi1 is not None:
            entry["xi1"] = list(c.xi1)
            entry["xi2"] = list(c.xi2)
        entry["metric"] = [list(row) for row in c.metric_text]
        charts.append(entry)
    return {
        "schema": SCHEMA,
        "dimension": spec.dimension,
        "coordinates": list(spec.coordinates),
        "seed": spec.seed,
        "trials": spec.trials,
        "probe_trials": spec.probe_trials,
        "tolerances": asdict(spec.tolerances),
        "charts": charts,
    }


def dumps(spec: ManifoldSpec) -> str:
    return tomli_w.dumps(to_dict(spec))
