import csv
import io
import json
from pathlib import Path

import pytest

from cebench import FIXTURES
from cebench.cli import main
from cebench.monitor import RunSummary
from cebench.report import REPORT_COLUMNS, load_summaries, render_csv, render_json, summaries_svg

from test_runner import make_grid

GOLDEN = Path(__file__).parent / "golden" / "report_header.csv"
QUOTES = str(FIXTURES / "instance_quotes.csv")
PARETO_RUNS = str(FIXTURES / "pareto_runs")


def test_run_and_resume(tmp_path, capsys):
    make_grid(tmp_path)
    out = str(tmp_path / "out")
    assert main(["run", "--config", str(tmp_path / "config.yaml"), "--out", out]) == 0
    assert main(["run", "--config", str(tmp_path / "config.yaml"), "--out", out, "--resume"]) == 0
    assert "backend calls: 0" in capsys.readouterr().out


def test_run_partial_failure_exit_code(tmp_path):
    make_grid(tmp_path, answer=lambda model, rec: None if model == "big" else "score: 1")
    assert main(["run", "--config", str(tmp_path / "config.yaml"), "--out", str(tmp_path / "o")]) == 1


def test_run_config_error_exit_code(tmp_path, capsys):
    (tmp_path / "bad.yaml").write_text("name: x\naxes: {top_k: [0]}\n")
    assert main(["run", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as e:
        main(["run"])
    assert e.value.code == 2


def test_recommend_pareto_fixture(tmp_path, capsys):
    assert main(["recommend", "--runs", PARETO_RUNS, "--quotes", QUOTES, "--out", str(tmp_path), "--svg",
                 str(tmp_path / "plans.svg")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "pareto.csv")))
    assert [round(float(r["est_cost_per_kprompt"]), 2) for r in rows] == [3.4, 3.47, 3.55, 3.78, 3.8, 9.37]
    assert len(json.loads((tmp_path / "recommendation.json").read_text())) == 6
    assert (tmp_path / "plans.svg").read_text().startswith("<svg")
    assert "mixtral:8x7b" in capsys.readouterr().out


def test_recommend_budget(tmp_path):
    assert main(["recommend", "--runs", PARETO_RUNS, "--quotes", QUOTES, "--out", str(tmp_path), "--budget", "5"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "pareto.csv")))
    assert rows and all(r["model"] != "mixtral:8x7b" for r in rows)


def test_recommend_no_plan_and_no_summaries(tmp_path, capsys):
    assert main(["recommend", "--runs", PARETO_RUNS, "--quotes", QUOTES, "--out", str(tmp_path),
                 "--budget", "0.1"]) == 3
    assert "no feasible plan" in capsys.readouterr().err
    (tmp_path / "empty").mkdir()
    assert main(["recommend", "--runs", str(tmp_path / "empty"), "--quotes", QUOTES]) == 2
    assert "no summaries" in capsys.readouterr().err


def test_recommend_constraint(tmp_path):
    assert main(["recommend", "--runs", PARETO_RUNS, "--quotes", QUOTES, "--out", str(tmp_path),
                 "--constraint", "mae<=2"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "pareto.csv")))
    assert [r["model"] for r in rows] == ["mixtral:8x7b"]


def test_report_csv_three_summaries(tmp_path, capsys):
    runs = tmp_path / "runs"
    runs.mkdir()
    for p in sorted(Path(PARETO_RUNS).glob("*.summary.json"))[:3]:
        (runs / p.name).write_bytes(p.read_bytes())
    assert main(["report", "--runs", str(runs), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4
    assert lines[0] == GOLDEN.read_text().strip()


def test_report_columns_are_golden():
    assert ",".join(REPORT_COLUMNS) == GOLDEN.read_text().strip()
    header = next(csv.reader(io.StringIO(render_csv(load_summaries(PARETO_RUNS)))))
    assert header == list(REPORT_COLUMNS)


def test_report_json_round_trips(tmp_path):
    out = tmp_path / "r.json"
    assert main(["report", "--runs", PARETO_RUNS, "--format", "json", "-o", str(out)]) == 0
    parsed = [RunSummary.from_dict(d) for d in json.loads(out.read_text())]
    assert parsed == load_summaries(PARETO_RUNS)
    assert render_json(parsed) == out.read_text()


def test_report_errors(tmp_path):
    assert main(["report", "--runs", PARETO_RUNS, "--format", "xml"]) == 2
    (tmp_path / "empty").mkdir()
    assert main(["report", "--runs", str(tmp_path / "empty")]) == 2


def test_report_svg(tmp_path):
    svg = tmp_path / "s.svg"
    assert main(["report", "--runs", PARETO_RUNS, "-o", str(tmp_path / "r.csv"), "--svg", str(svg)]) == 0
    text = svg.read_text()
    assert text.startswith("<svg") and text.count("<polygon") >= 1
    assert summaries_svg([]).startswith("<svg")
