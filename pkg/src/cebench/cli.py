"""``cebench`` command line: run, recommend, report.

Exit codes: 0 success, 1 some runs failed, 2 usage or config error,
3 no feasible plan.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_experiment_config
from .corpus import DatasetError
from .recommender import (
    NoFeasiblePlanError,
    NoSummariesError,
    QualityConstraint,
    build_candidates,
    load_pricing,
    load_quotes,
    recommend,
    write_pareto_csv,
    write_recommendation_json,
)
from .report import load_summaries, plans_svg, render_csv, render_json, summaries_svg
from .runner import ManifestMismatch, run_batch

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_NO_PLAN = 0, 1, 2, 3


def cmd_run(args) -> int:
    path = Path(args.config)
    try:
        text = path.read_text(encoding="utf-8")
        grid = load_experiment_config(path)
        result = run_batch(grid, args.out, resume=args.resume, parallel_runs=args.parallel_runs, config_text=text)
    except (OSError, ConfigError, DatasetError, ManifestMismatch) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(f"runs: {len(result.done)} done, {len(result.skipped)} skipped, {len(result.failed)} failed; "
          f"backend calls: {result.backend_calls}")
    return result.exit_code


def _objectives(text: str | None):
    if not text:
        return None
    return [o.strip() for o in text.split(",") if o.strip()]


def _fmt(v, spec=".4g"):
    return "-" if v is None else format(v, spec)


def cmd_recommend(args) -> int:
    summaries = load_summaries(args.runs)
    if not summaries:
        print(f"error: no summaries in {args.runs}", file=sys.stderr)
        return EXIT_USAGE
    try:
        quotes = load_quotes(args.quotes)
        pricing = load_pricing(args.pricing) if args.pricing else None
        constraint = QualityConstraint.parse(args.constraint) if args.constraint else None
        bench = args.bench_tflops if args.bench_tflops else args.bench
        plans = recommend(
            summaries, quotes, budget=args.budget, quality_constraint=constraint,
            objectives=_objectives(args.objectives), bench=bench, pricing=pricing,
            quality_metric=args.metric, latency_basis=args.latency_basis,
        )
    except NoSummariesError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NoFeasiblePlanError as e:
        print(f"no feasible plan: {e}", file=sys.stderr)
        return EXIT_NO_PLAN
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out or args.runs)
    out.mkdir(parents=True, exist_ok=True)
    write_recommendation_json(out / "recommendation.json", plans)
    write_pareto_csv(out / "pareto.csv", plans)
    if args.svg:
        metric = plans[0].quality_metric
        bench_tflops = bench if not isinstance(bench, str) else next(q.tflops for q in quotes if q.name == bench)
        everything = build_candidates(summaries, quotes, bench_tflops, metric, pricing, args.latency_basis)
        Path(args.svg).write_text(plans_svg(everything, plans), encoding="utf-8")

    metric = plans[0].quality_metric
    header = f"{'#':>3}  {'model':<18} {'instance':<22} {metric:>10} {'est_time_s':>10} {'$/kPrompt':>10}  run_id"
    print(header)
    for i, p in enumerate(plans, 1):
        print(f"{i:>3}  {str(p.axes.get('model', '')):<18} {p.instance:<22} {_fmt(p.quality):>10} "
              f"{_fmt(p.est_time, '.2f'):>10} {_fmt(p.est_cost, '.2f'):>10}  {p.run_id}")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.format not in ("csv", "json"):
        print(f"error: unknown format {args.format!r}", file=sys.stderr)
        return EXIT_USAGE
    summaries = load_summaries(args.runs)
    if not summaries:
        print(f"error: no summaries in {args.runs}", file=sys.stderr)
        return EXIT_USAGE
    text = render_csv(summaries) if args.format == "csv" else render_json(summaries)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.svg:
        Path(args.svg).write_text(summaries_svg(summaries), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cebench", description="Cost-effectiveness benchmarking for LLM pipelines")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute every run of an experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true", help="skip runs the manifest marks done")
    p.add_argument("--parallel-runs", type=int, default=1, metavar="N")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("recommend", help="estimate cost on quoted instances and print the Pareto front")
    p.add_argument("--runs", required=True)
    p.add_argument("--quotes", required=True)
    p.add_argument("--pricing")
    p.add_argument("--budget", type=float, help="max $ per 1000 prompts")
    p.add_argument("--constraint", help="e.g. 'f1_macro>=0.9' or 'mae<=3'")
    p.add_argument("--objectives", help="comma list, default 'quality,est_cost'")
    p.add_argument("--metric", help="quality metric (default: mae, else first available)")
    p.add_argument("--bench", default="bench", help="quote name of the benchmarking server")
    p.add_argument("--bench-tflops", type=float, help="benchmark GPU TFLOPs (overrides --bench)")
    p.add_argument("--latency-basis", choices=("end_to_end", "llm"), default="end_to_end")
    p.add_argument("--out", help="output directory (default: --runs)")
    p.add_argument("--svg", help="write a cost-vs-quality scatter")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("report", help="flat table of all run summaries")
    p.add_argument("--runs", required=True)
    p.add_argument("--format", default="csv")
    p.add_argument("--output", "-o")
    p.add_argument("--svg", help="write a latency-vs-quality scatter")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
