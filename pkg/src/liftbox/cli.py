"""Command-line entry point: ``liftbox generate | eval | losses selftest | thresholds build``.

Exit codes: 0 success, 1 invalid input, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import LiftboxError, ValidationError
from .formats import load_structured, read_ref_counts
from .gate import EmbeddingTable, build_threshold_table
from .pipeline import PipelineConfig, ingest_manifest, run_eval, run_generate, write_report
from .selftest import run_gradient_suite

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _config(path) -> PipelineConfig:
    return PipelineConfig.load(path) if path else PipelineConfig()


def cmd_generate(args) -> int:
    config = _config(args.config)
    manifest = ingest_manifest(args.manifest)
    doc = run_generate(manifest, config, args.out, args.stats, workers=args.workers)
    s = doc["summary"]
    print(f"{s['emitted']} boxes from {s['instances']} instances in {s['images']} images "
          f"({s['failed_images']} images failed)")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = run_eval(args.pred, args.gt, _config(args.config), partition=args.partition)
    write_report(report, args.report)
    print(report.format_table())
    return EXIT_OK


def cmd_selftest(args) -> int:
    report = run_gradient_suite(trials=args.trials, seed=args.seed)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_INVALID


def cmd_thresholds(args) -> int:
    classes = load_structured(args.classes)
    if not isinstance(classes, (dict, list)):
        raise ValidationError(f"{args.classes}: expected a mapping of class id to name or a list of names")
    emb = EmbeddingTable.load(args.embeddings)
    table = build_threshold_table(read_ref_counts(args.ref_counts), classes, emb, emb)
    text = json.dumps(table.to_dict(), indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liftbox", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log skipped instances")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="lift instance masks and depth to pseudo 3D boxes")
    gen.add_argument("--manifest", required=True)
    gen.add_argument("--config")
    gen.add_argument("--out", required=True, help="output box records (JSON lines)")
    gen.add_argument("--stats", required=True, help="per-image stats (JSON)")
    gen.add_argument("--workers", type=int, help="overrides the config's worker count")
    gen.set_defaults(func=cmd_generate)

    ev = sub.add_parser("eval", help="score box records against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--config")
    ev.add_argument("--report", required=True, help="JSON report path; a table goes to stdout")
    ev.add_argument("--partition", help="original / new class ids for the split AP columns")
    ev.set_defaults(func=cmd_eval)

    losses = sub.add_parser("losses", help="loss utilities")
    losses_sub = losses.add_subparsers(dest="losses_command", required=True)
    st = losses_sub.add_parser("selftest", help="finite-difference check of every analytic gradient")
    st.add_argument("--trials", type=int, default=100)
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_selftest)

    thr = sub.add_parser("thresholds", help="per-class point thresholds")
    thr_sub = thr.add_subparsers(dest="thresholds_command", required=True)
    build = thr_sub.add_parser("build", help="build a threshold table")
    build.add_argument("--ref-counts", required=True, help="class name -> mean point count")
    build.add_argument("--embeddings", required=True, help="name embeddings for reference and target classes")
    build.add_argument("--classes", required=True, help="target classes: id -> name mapping or list")
    build.add_argument("--out", help="output path (default stdout)")
    build.set_defaults(func=cmd_thresholds)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LiftboxError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
