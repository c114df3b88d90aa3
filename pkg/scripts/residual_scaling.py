"""Covariant-derivative residual of the metric and of h_1 against the finite-difference step.

Central differences are second order, so each halving of the step should cut
the residual of a parallel tensor by about 4 until rounding takes over.

    python3 scripts/residual_scaling.py
"""

from pathlib import Path

import numpy as np

from parallel_metrics.geometry import metric_jet
from parallel_metrics.partition import interior_mask
from parallel_metrics.pipeline import decompose
from parallel_metrics.specfile import load
from parallel_metrics.verify import covariant_residual

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "example_r4.toml"
STEPS = [4e-3, 2e-3, 1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5]


def main():
    d = decompose(load(FIXTURE))
    chart = d.analyses[0].chart
    pts = chart.grid()[interior_mask(chart, chart.grid(), max(STEPS))]
    tensors = {
        "h": lambda p: metric_jet(chart, p).Ginv,
        "h_1": lambda p: d.basis.h(0, 0, p),
    }
    print(f"{'fd_step':>10} " + " ".join(f"{name:>12} {'ratio':>6}" for name in tensors))
    prev = {}
    for s in STEPS:
        cols = []
        for name, T in tensors.items():
            r = covariant_residual(T, chart, pts, fd_step=s).max_residual
            ratio = prev[name] / r if name in prev else np.nan
            prev[name] = r
            cols.append(f"{r:12.3e} {ratio:6.2f}")
        print(f"{s:10.3e} " + " ".join(cols))


if __name__ == "__main__":
    main()
