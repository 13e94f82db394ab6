"""Run both shipped mock grids end to end and print the reports.

    python scripts/run_demo.py [--out demo_runs]

Uses the replay backend, so no model server is needed and the summaries are
identical on every run.
"""

import argparse
from pathlib import Path

from cebench import FIXTURES
from cebench.cli import main as cebench


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_runs")
    args = ap.parse_args()
    out = Path(args.out)
    quotes = str(FIXTURES / "instance_quotes.csv")

    print("== mental health (local models, RAG, 2x2 grid)")
    cebench(["run", "--config", str(FIXTURES / "mock_grid.yaml"), "--out", str(out / "mental")])
    cebench(["report", "--runs", str(out / "mental"), "-o", str(out / "mental" / "report.csv"),
             "--svg", str(out / "mental" / "latency_vs_mae.svg")])
    cebench(["recommend", "--runs", str(out / "mental"), "--quotes", quotes])

    print("\n== contract review (online services, RAG vs few-shot)")
    cebench(["run", "--config", str(FIXTURES / "contract_grid.yaml"), "--out", str(out / "contract")])
    cebench(["recommend", "--runs", str(out / "contract"), "--quotes", quotes,
             "--pricing", str(FIXTURES / "pricing.csv"), "--constraint", "f1_macro>=0.8",
             "--svg", str(out / "contract" / "cost_vs_f1.svg")])


if __name__ == "__main__":
    main()
