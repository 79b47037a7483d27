"""Command line front end: ``kolmolab <suite> --model NAME|PATH [options]``.

Exit codes: 0 pass (or flagged, with a note on stderr), 1 property
violation, 2 input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import InvalidInputError, KolmolabError
from .models import BUILTIN_MODELS, load_model
from .reports import SUITES, Overrides, merge_reports, run_suite, to_csv, to_json, write_atomic


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--model", required=True, help=f"builtin ({', '.join(BUILTIN_MODELS)}) or config path")
    p.add_argument("--p", type=int, default=None, help="onion exponent p")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--t-points", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--out", default=None, help="output file (stdout when omitted)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kolmolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="suite", required=True, metavar="SUITE")
    for name in SUITES:
        _add_common(sub.add_parser(name, help=f"run the {name} suite"))
    rep = sub.add_parser("report", help="merge several JSON suite reports")
    rep.add_argument("inputs", nargs="+")
    rep.add_argument("--out", default=None)
    rep.add_argument("--format", choices=("json",), default="json")
    return parser


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        write_atomic(out, text)


def _merge(paths) -> dict:
    reports = []
    for p in paths:
        try:
            reports.append(json.loads(Path(p).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read report {p}: {exc}") from exc
    return merge_reports(reports)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.suite == "report":
            merged = _merge(args.inputs)
            _emit(to_json(merged), args.out)
            status = merged["status"]
        else:
            config = load_model(args.model)
            ov = Overrides(args.p, args.seed, args.t_min, args.t_max, args.t_points, args.samples)
            report = run_suite(config, args.suite, ov)
            _emit(to_csv(report) if args.format == "csv" else to_json(report), args.out)
            status = report.status
    except KolmolabError as exc:
        print(f"kolmolab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if status == "fail":
        return 1
    if status == "flagged":
        print("kolmolab: note: status is flagged (see metrics)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
