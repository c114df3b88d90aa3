"""Decompose the four-dimensional example and compare h_1, h_2 with their closed forms.

    python3 scripts/run_example.py [--grid-res N]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from parallel_metrics.pipeline import decompose
from parallel_metrics.specfile import load

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "example_r4.toml"


def closed_form(pts):
    x, u = pts[:, 0], pts[:, 2]
    zero, one = np.zeros_like(x), np.ones_like(x)
    h1 = np.stack([one, np.exp(-2 * x), zero, zero], 1)
    h2 = np.stack([zero, zero, one, np.exp(-2 * u)], 1)
    return [np.einsum("pi,ij->pij", h, np.eye(4)) for h in (h1, h2)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid-res", type=int, default=None)
    args = ap.parse_args()
    spec = load(FIXTURE)
    if args.grid_res:
        spec = spec.with_grid_res(args.grid_res)
    t0 = time.perf_counter()
    d = decompose(spec)
    elapsed = time.perf_counter() - t0
    print(f"A = {d.basis.A}   ({elapsed:.2f} s)")
    for a, members in enumerate(d.index.blocks):
        print(f"I_{a + 1} = {{" + ", ".join(f"({i + 1},{d.analyses[c].chart.name})" for c, i in members) + "}")
    print(f"{'chart':6} {'points':>7} {'|h1 - closed|':>14} {'|h2 - closed|':>14}")
    for c, an in enumerate(d.analyses):
        pts = an.chart.grid()
        exact = closed_form(pts)
        errs = [np.abs(d.basis.h(a, c, pts) - exact[a]).max() for a in range(2)]
        print(f"{an.chart.name:6} {len(pts):7d} {errs[0]:14.3e} {errs[1]:14.3e}")


if __name__ == "__main__":
    main()
