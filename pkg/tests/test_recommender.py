import csv
import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from cebench import FIXTURES
from cebench.monitor import RunSummary
from cebench.recommender import (
    CandidatePlan,
    InstanceQuote,
    NoFeasiblePlanError,
    NoSummariesError,
    PricingEntry,
    QualityConstraint,
    build_candidates,
    estimate_cost_per_kprompt,
    estimate_latency,
    feasible,
    load_pricing,
    load_quotes,
    online_cost_per_prompt,
    pareto_front,
    recommend,
    write_pareto_csv,
    write_recommendation_json,
)
from cebench.report import load_summaries

GB = 10**9
QUOTES = load_quotes(FIXTURES / "instance_quotes.csv")
BY_NAME = {q.name: q for q in QUOTES}


def summary(run_id="r", peak=6 * GB, latency=4.0, metrics=None, model="m", tokens=(1000, 10), n=10):
    return RunSummary(run_id, {"model": model}, n, metrics or {"mae": 2.0}, latency, latency, latency,
                      peak, None, tokens[0] * n, tokens[1] * n, 1.0)


def plan(i, *values, metric="mae"):
    """Plan whose objective fields are (quality, est_cost, est_time)[:len(values)]."""
    vals = list(values) + [1.0] * (3 - len(values))
    return CandidatePlan(f"p{i}", {}, "x", vals[2], vals[1], {metric: vals[0]}, metric)


def oracle_front(vectors):
    def dom(a, b):
        return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))
    return [i for i, v in enumerate(vectors) if not any(dom(w, v) for w in vectors)]


# -- estimates --------------------------------------------------------------


def test_quote_fixture():
    assert [(q.name, q.gpu, q.gpu_memory, q.tflops, q.price) for q in QUOTES] == [
        ("P2", "K80", 12, 8.22, 1.326), ("P3", "V100", 16, 32.71, 3.823), ("G5", "A10G", 24, 31.52, 1.515),
        ("G6", "L4", 16, 30.29, 1.172), ("bench", "A100", 80, 77.97, 4.777)]


def test_latency_examples():
    assert estimate_latency(7.06, 77.97, 77.97) == 7.06
    assert estimate_latency(4.537, 77.97, 30.29) == pytest.approx(11.68, abs=0.005)
    with pytest.raises(ValueError):
        estimate_latency(0, 1, 1)


@given(st.floats(1e-3, 1e3), st.floats(1, 200), st.floats(1, 200))
def test_doubling_target_halves_latency(x, a, b):
    assert estimate_latency(x, a, 2 * b) == pytest.approx(estimate_latency(x, a, b) / 2, rel=1e-12)


def test_cost_examples():
    assert estimate_cost_per_kprompt(7.06, 4.777) == pytest.approx(9.37, abs=0.01)
    assert estimate_cost_per_kprompt(11.68, 1.172) == pytest.approx(3.80, abs=0.01)
    assert estimate_cost_per_kprompt(5.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        estimate_cost_per_kprompt(0.0, 1.0)


@given(st.floats(1e-3, 1e3), st.floats(0, 100), st.floats(0.1, 10))
def test_cost_linear(t, price, c):
    assert estimate_cost_per_kprompt(c * t, price) == pytest.approx(c * estimate_cost_per_kprompt(t, price), rel=1e-12)
    assert estimate_cost_per_kprompt(t, c * price) == pytest.approx(c * estimate_cost_per_kprompt(t, price), rel=1e-12)


def test_online_cost():
    p = PricingEntry("haiku", 0.25, 1.25)
    assert online_cost_per_prompt(0, 0, p) == 0
    assert online_cost_per_prompt(1_000_000, 0, p) == pytest.approx(0.25)
    assert online_cost_per_prompt(1276, 0, p) == pytest.approx(0.000319)


def test_pricing_fixture():
    prices = load_pricing(FIXTURES / "pricing.csv")
    assert prices["claude-3-haiku"].input_price == 0.25


def test_feasibility():
    big = summary(peak=40 * GB)
    assert not feasible(big, BY_NAME["G6"])
    assert feasible(big, BY_NAME["bench"])
    assert all(feasible(summary(peak=0), q) for q in QUOTES)


def test_unknown_peak_is_infeasible(caplog):
    assert not feasible(summary(peak=None), BY_NAME["bench"])
    assert "no recorded peak" in caplog.text


# -- Pareto front -----------------------------------------------------------


def test_front_examples():
    assert pareto_front([plan(0, 5.0, 5.0)]) == [plan(0, 5.0, 5.0)]
    both = [plan(0, 2.33, 3.80), plan(1, 1.67, 9.37)]
    assert pareto_front(both) == both
    assert [p.run_id for p in pareto_front([plan(0, 2, 2), plan(1, 1, 1)])] == ["p1"]


def test_equal_plans_both_kept():
    assert len(pareto_front([plan(0, 1, 1), plan(1, 1, 1), plan(2, 2, 2)])) == 2


def test_higher_is_better_metrics_are_negated():
    plans = [plan(0, 0.95, 5.0, metric="f1_macro"), plan(1, 0.90, 5.0, metric="f1_macro")]
    assert [p.run_id for p in pareto_front(plans)] == ["p0"]


def test_explicit_direction_and_errors():
    plans = [plan(0, 1, 1), plan(1, 2, 1)]
    assert [p.run_id for p in pareto_front(plans, [("quality", "max"), ("est_cost", "min")])] == ["p1"]
    with pytest.raises(ValueError):
        pareto_front(plans, [])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3).flatmap(lambda m: st.lists(
    st.tuples(*[st.integers(0, 6)] * m), min_size=1, max_size=60)))
def test_front_matches_oracle(rows):
    plans = [plan(i, *map(float, r)) for i, r in enumerate(rows)]
    objectives = ["quality", "est_cost", "est_time"][: len(rows[0])]
    got = pareto_front(plans, objectives)
    assert [p.run_id for p in got] == [f"p{i}" for i in oracle_front(rows)]
    assert pareto_front(got, objectives) == got


# -- constraints ------------------------------------------------------------


def test_constraint_parse_and_coerce():
    c = QualityConstraint.parse("f1_macro>=0.9")
    assert (c.metric, c.op, c.bound) == ("f1_macro", ">=", 0.9)
    assert c.check(0.95) and not c.check(0.85) and not c.check(None)
    assert QualityConstraint.coerce(("mae", 3)).op == "<="
    assert QualityConstraint.coerce(("f1_macro", 0.9)).op == ">="
    with pytest.raises(ValueError):
        QualityConstraint.parse("f1 is high")


# -- recommend on the back-solved Pareto fixture -------------------------


@pytest.fixture(scope="module")
def pareto_runs():
    return load_summaries(FIXTURES / "pareto_runs")


def test_pareto_front(pareto_runs):
    plans = recommend(pareto_runs, QUOTES)
    rows = [(p.axes["model"], p.instance, p.quality, round(p.est_time, 2), p.est_cost) for p in plans]
    assert [r[:4] for r in rows] == [
        ("llama3:8b", "G6", 7.89, 10.44), ("llama3:8b", "G6", 6.45, 10.65), ("llama3:8b", "G6", 5.48, 10.89),
        ("llama3:8b", "G6", 3.67, 11.61), ("llama3:8b", "G6", 2.33, 11.68), ("mixtral:8x7b", "bench", 1.67, 7.06)]
    costs = [r[4] for r in rows]
    assert costs == sorted(costs)
    assert costs[4] == pytest.approx(3.80, abs=0.01) and costs[5] == pytest.approx(9.37, abs=0.01)


def test_pareto_budget(pareto_runs):
    plans = recommend(pareto_runs, QUOTES, budget=5)
    assert all(p.est_cost <= 5 for p in plans)
    assert "mixtral:8x7b" not in {p.axes["model"] for p in plans}


def test_pareto_quality_constraint(pareto_runs):
    plans = recommend(pareto_runs, QUOTES, quality_constraint=("mae", 3.0))
    assert [p.quality for p in plans] == [2.33, 1.67]


def test_no_feasible_plan_is_distinct(pareto_runs):
    with pytest.raises(NoFeasiblePlanError):
        recommend(pareto_runs, QUOTES, budget=0.5)
    with pytest.raises(NoSummariesError):
        recommend([], QUOTES)


def test_every_plan_respects_filters(pareto_runs):
    for budget in (3.5, 4.0, 10.0, None):
        for plan_ in recommend(pareto_runs, QUOTES, budget=budget):
            assert plan_.feasible
            assert budget is None or plan_.est_cost <= budget


def test_online_plans():
    s_cheap = summary("a", peak=None, latency=1.0, metrics={"f1_macro": 0.92}, model="claude-3-haiku")
    s_good = summary("b", peak=None, latency=2.0, metrics={"f1_macro": 0.97}, model="claude-3-opus")
    s_bad = summary("c", peak=None, latency=2.0, metrics={"f1_macro": 0.80}, model="gpt-4")
    prices = load_pricing(FIXTURES / "pricing.csv")
    plans = recommend([s_cheap, s_good, s_bad], QUOTES, pricing=prices, quality_constraint=("f1_macro", 0.9))
    assert [p.instance for p in plans] == ["online:claude-3-haiku", "online:claude-3-opus"]
    assert plans[0].est_cost == pytest.approx(1000 * (1000 * 0.25 + 10 * 1.25) / 1e6)


def test_llm_latency_basis():
    # 5 s end to end, of which 4 s in the model: only the model part scales
    s = RunSummary("r", {"model": "m"}, 1, {"mae": 1.0}, 5.0, 5.0, 4.0, GB, None, 1, 1, 1.0)
    ratio = 77.97 / 30.29
    e2e = {p.instance: p.est_time for p in build_candidates([s], QUOTES, 77.97, "mae")}
    llm = {p.instance: p.est_time for p in build_candidates([s], QUOTES, 77.97, "mae", latency_basis="llm")}
    assert e2e["G6"] == pytest.approx(5.0 * ratio, rel=1e-12)
    assert llm["G6"] == pytest.approx(4.0 * ratio + 1.0, rel=1e-12)
    assert e2e["bench"] == llm["bench"] == pytest.approx(5.0)


def test_output_files(pareto_runs, tmp_path):
    plans = recommend(pareto_runs, QUOTES)
    write_recommendation_json(tmp_path / "r.json", plans)
    write_pareto_csv(tmp_path / "p.csv", plans)
    data = json.loads((tmp_path / "r.json").read_text())
    assert len(data) == 6 and data[0]["instance"] == "G6"
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert [float(r["est_cost_per_kprompt"]) for r in rows] == pytest.approx([p.est_cost for p in plans])
    assert all(math.isfinite(float(r["mae"])) for r in rows)
