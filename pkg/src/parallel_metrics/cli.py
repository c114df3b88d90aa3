"""Command-line entry point: ``parallel-metrics run|eval``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ParallelMetricsError, SpecError
from .pipeline import dumps_report, error_report, evaluate, run


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parallel-metrics", description="Decompose a metric into parallel blocks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the full decomposition on a spec file")
    r.add_argument("spec", type=Path)
    r.add_argument("--seed", type=int, default=None, help="override the spec seed")
    r.add_argument("--grid-res", type=int, default=None, help="override grid_res on every chart")
    r.add_argument("--json-only", action="store_true", help="print only the JSON report")
    r.add_argument("-o", "--output", type=Path, default=None, help="write the report here instead of stdout")

    e = sub.add_parser("eval", help="evaluate h_a at a point from a saved report")
    e.add_argument("report", type=Path)
    e.add_argument("--block", type=int, required=True, help="1-based global block index")
    e.add_argument("--chart", required=True)
    e.add_argument("--point", type=float, nargs="+", required=True)
    e.add_argument("--spec", type=Path, default=None, help="spec file to use instead of the embedded copy")
    return p


def _summary(report: dict) -> str:
    lines = [f"A = {report['A']}"]
    for a, members in enumerate(report["blocks"], 1):
        lines.append(f"  I_{a} = {{" + ", ".join(f"({m['block']}, {m['chart']})" for m in members) + "}")
    cert = report["certification"]
    lines.append(
        f"certified: max residual {cert['max_basis_residual']:.3g} < {cert['parallel_tol']:g}, "
        f"controls >= {cert['min_control_residual'] if cert['min_control_residual'] is not None else float('nan'):.3g}"
    )
    return "\n".join(lines)


def _cmd_run(args) -> int:
    try:
        report = run(args.spec, args.seed, args.grid_res)
    except ParallelMetricsError as exc:
        err = error_report(exc)
        text = dumps_report(err)
        if args.output:
            args.output.write_text(text)
        else:
            sys.stdout.write(text)
        if not args.json_only:
            print(f"error: {exc}", file=sys.stderr)
        return err["exit_code"]
    text = dumps_report(report)
    if args.output:
        args.output.write_text(text)
        if not args.json_only:
            print(_summary(report))
    else:
        sys.stdout.write(text)
        if not args.json_only:
            print(_summary(report), file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    try:
        try:
            report = json.loads(args.report.read_text())
        except (OSError, ValueError) as exc:
            raise SpecError(f"cannot read report {str(args.report)!r}: {exc}") from exc
        spec_text = args.spec.read_text() if args.spec else None
        contra, cov = evaluate(report, args.block, args.chart, args.point, spec_text)
    except ParallelMetricsError as exc:
        sys.stdout.write(dumps_report(error_report(exc)))
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    out = {
        "block": args.block,
        "chart": args.chart,
        "point": [float(v) for v in args.point],
        "contravariant": np.asarray(contra).tolist(),
        "covariant": np.asarray(cov).tolist(),
    }
    sys.stdout.write(json.dumps(out, indent=1) + "\n")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_eval(args)


if __name__ == "__main__":
    sys.exit(main())
