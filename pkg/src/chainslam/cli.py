"""Command line entry point.

    chainslam run <scenario> -o <dir> [--seed N] [--ply]
    chainslam metrics <runlog.csv> [--bias-tail-s S]
    chainslam export-map <run dir> [--ply] [-o FILE]

``<scenario>`` is a YAML file or one of the bundled names (fixed5,
fixed20, free20). Exit codes: 0 ok, 1 usage/parse error, 2 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from . import metrics as mt
from . import scenario as scn
from .estimator import DegenerateUpdateError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chainslam", description="Whole-body chain posture estimation and mapping")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate and estimate a scenario")
    r.add_argument("scenario")
    r.add_argument("-o", "--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--duration", type=float, default=None, help="override duration_s")
    r.add_argument("--ply", action="store_true", help="also write map.ply")

    m = sub.add_parser("metrics", help="recompute metrics from a run log")
    m.add_argument("runlog")
    m.add_argument("--bias-tail-s", type=float, default=20.0)

    e = sub.add_parser("export-map", help="re-export the map of a finished run")
    e.add_argument("run_dir")
    e.add_argument("--ply", action="store_true")
    e.add_argument("-o", "--out", default=None)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.cmd == "run":
        try:
            sc = scn.load(args.scenario)
            if args.seed is not None:
                sc.seed = args.seed
            if args.duration is not None:
                sc.duration_s = args.duration
        except scn.ScenarioError as exc:
            print(f"chainslam: {exc}", file=sys.stderr)
            return EXIT_USAGE
        try:
            res = harness.run_scenario(sc, args.out, ply=args.ply)
        except DegenerateUpdateError as exc:
            print(f"chainslam: numerical abort: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        except OSError as exc:
            print(f"chainslam: {exc}", file=sys.stderr)
            return EXIT_USAGE
        for key in ("end_link_base_mean_err_m", "end_link_filt_mean_err_m", "reduction_pct",
                    "root_pos_rmse_m"):
            print(f"{key}={mt.format_value(res.metrics[key])}")
        return EXIT_OK

    if args.cmd == "metrics":
        try:
            summary = mt.compute(mt.read_runlog(args.runlog), bias_tail_s=args.bias_tail_s)
        except (OSError, ValueError) as exc:
            print(f"chainslam: {exc}", file=sys.stderr)
            return EXIT_USAGE
        for k, v in summary.items():
            print(f"{k}={mt.format_value(v)}")
        return EXIT_OK

    try:
        if args.out:
            with open(args.out, "w") as fh:
                harness.export_map(args.run_dir, fh, ply=args.ply)
        else:
            harness.export_map(args.run_dir, sys.stdout, ply=args.ply)
    except OSError as exc:
        print(f"chainslam: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
