"""Deployment plan estimation and Pareto selection.

Latency measured on the benchmark server is rescaled to other GPUs by the
TFLOPs ratio, turned into dollars per 1000 prompts with the instance's hourly
price, filtered by memory feasibility, budget and quality, and reduced to the
non-dominated set.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import operator
import os
import re
from dataclasses import asdict, dataclass
from typing import Any, Sequence

from .evaluators import HIGHER_IS_BETTER
from .monitor import RunSummary

logger = logging.getLogger(__name__)

GB = 1e9
ONLINE_PREFIX = "online:"


class RecommendError(ValueError):
    pass


class NoSummariesError(RecommendError):
    pass


class NoFeasiblePlanError(RecommendError):
    pass


@dataclass(frozen=True)
class InstanceQuote:
    name: str
    gpu: str
    gpu_memory: float  # GB
    tflops: float
    price: float  # $/hour

    def __post_init__(self):
        if not self.tflops > 0:
            raise ValueError(f"{self.name}: tflops must be > 0")
        if not self.gpu_memory > 0:
            raise ValueError(f"{self.name}: gpu_memory must be > 0")
        if self.price < 0:
            raise ValueError(f"{self.name}: price must be >= 0")


@dataclass(frozen=True)
class PricingEntry:
    model: str
    input_price: float  # $ per 1M input tokens
    output_price: float  # $ per 1M output tokens

    def __post_init__(self):
        if self.input_price < 0 or self.output_price < 0:
            raise ValueError(f"{self.model}: prices must be >= 0")


@dataclass
class CandidatePlan:
    run_id: str
    axes: dict[str, Any]
    instance: str
    est_time: float | None
    est_cost: float | None
    metrics: dict[str, float]
    quality_metric: str
    feasible: bool = True

    @property
    def quality(self) -> float | None:
        return self.metrics.get(self.quality_metric)

    def value(self, name: str) -> float:
        if name in ("est_time", "est_cost"):
            v = getattr(self, name)
        elif name == "quality":
            v = self.quality
        else:
            v = self.metrics.get(name)
        if v is None:
            raise KeyError(f"plan {self.run_id}/{self.instance} has no value for {name!r}")
        return v

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["quality"] = self.quality
        return d


def load_quotes(path: str | os.PathLike) -> list[InstanceQuote]:
    """CSV with header ``name,gpu,gpu_memory_gb,tflops,price_per_hour``."""
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            InstanceQuote(r["name"], r["gpu"], float(r["gpu_memory_gb"]), float(r["tflops"]), float(r["price_per_hour"]))
            for r in csv.DictReader(fh)
        ]


def load_pricing(path: str | os.PathLike) -> dict[str, PricingEntry]:
    """CSV with header ``model,input_per_1m,output_per_1m``."""
    with open(path, encoding="utf-8", newline="") as fh:
        entries = [
            PricingEntry(r["model"], float(r["input_per_1m"]), float(r["output_per_1m"]))
            for r in csv.DictReader(fh)
        ]
    return {e.model: e for e in entries}


def estimate_latency(measured: float, bench_tflops: float, target_tflops: float) -> float:
    if not (measured > 0 and bench_tflops > 0 and target_tflops > 0):
        raise ValueError("latency and TFLOPs must all be positive")
    return measured * (bench_tflops / target_tflops)


def estimate_cost_per_kprompt(est_time: float, price: float) -> float:
    """Dollars for 1000 prompts at ``est_time`` seconds each and ``price`` $/hour."""
    if not est_time > 0:
        raise ValueError("est_time must be positive")
    if price < 0:
        raise ValueError("price must be non-negative")
    return price * est_time * 1000 / 3600


def online_cost_per_prompt(tokens_in: float, tokens_out: float, pricing: PricingEntry) -> float:
    if tokens_in < 0 or tokens_out < 0:
        raise ValueError("token counts must be non-negative")
    return tokens_in * pricing.input_price / 1e6 + tokens_out * pricing.output_price / 1e6


def feasible(summary: RunSummary, quote: InstanceQuote) -> bool:
    """Peak GPU memory fits the instance. An unknown peak is treated as infeasible."""
    if summary.peak_gpu_memory is None:
        logger.warning("run %s has no recorded peak GPU memory; treating as infeasible on %s",
                       summary.run_id, quote.name)
        return False
    return summary.peak_gpu_memory <= quote.gpu_memory * GB


# ---------------------------------------------------------------------------
# Pareto front
# ---------------------------------------------------------------------------


def _normalize_objectives(objectives) -> list[tuple[str, str | None]]:
    out = []
    for obj in objectives:
        name, direction = (obj, None) if isinstance(obj, str) else obj
        if direction not in (None, "min", "max"):
            raise ValueError(f"objective direction must be 'min' or 'max', got {direction!r}")
        out.append((name, direction))
    if not out:
        raise ValueError("at least one objective is required")
    return out


def _direction(name: str, plan: CandidatePlan) -> str:
    metric = plan.quality_metric if name == "quality" else name
    return "max" if metric in HIGHER_IS_BETTER else "min"


def _dominates(a: tuple, b: tuple) -> bool:
    return all(x <= y for x, y in zip(a, b)) and a != b


def objective_vectors(plans: Sequence[CandidatePlan], objectives) -> list[tuple[float, ...]]:
    """Per-plan objective tuples in minimization form (maximized ones negated)."""
    objs = _normalize_objectives(objectives)
    vecs = []
    for p in plans:
        v = []
        for name, direction in objs:
            direction = direction or _direction(name, p)
            x = float(p.value(name))
            if math.isnan(x):
                raise ValueError(f"objective {name!r} is NaN for {p.run_id}/{p.instance}")
            v.append(-x if direction == "max" else x)
        vecs.append(tuple(v))
    return vecs


def pareto_front(plans: Sequence[CandidatePlan], objectives=("quality", "est_cost")) -> list[CandidatePlan]:
    """Non-dominated plans, in input order.

    Plans are visited in lexicographic order of their objective vectors, so a
    plan can only be dominated by one visited earlier, and only the front
    found so far needs checking. Equal vectors never dominate each other.
    """
    vecs = objective_vectors(plans, objectives)
    order = sorted(range(len(plans)), key=lambda i: vecs[i])
    front: list[int] = []
    for i in order:
        if not any(_dominates(vecs[j], vecs[i]) for j in front):
            front.append(i)
    return [plans[i] for i in sorted(front)]


# ---------------------------------------------------------------------------
# Recommendation
# ---------------------------------------------------------------------------

_CONSTRAINT = re.compile(r"^\s*([A-Za-z_][\w]*)\s*(<=|>=|<|>|==)\s*([-+0-9.eE]+)\s*$")
_OPS = {"<=": operator.le, ">=": operator.ge, "<": operator.lt, ">": operator.gt, "==": operator.eq}


@dataclass(frozen=True)
class QualityConstraint:
    metric: str
    op: str
    bound: float

    def check(self, value: float | None) -> bool:
        return value is not None and _OPS[self.op](value, self.bound)

    @classmethod
    def coerce(cls, t: tuple) -> "QualityConstraint":
        """``(metric, bound)`` uses the metric's natural direction; ``(metric, op, bound)`` is explicit."""
        if len(t) == 3:
            return cls(*t)
        metric, bound = t
        return cls(metric, ">=" if metric in HIGHER_IS_BETTER else "<=", float(bound))

    @classmethod
    def parse(cls, text: str) -> "QualityConstraint":
        m = _CONSTRAINT.match(text)
        if not m:
            raise ValueError(f"bad constraint {text!r}; expected e.g. 'f1_macro>=0.9'")
        return cls(m.group(1), m.group(2), float(m.group(3)))


def _default_quality_metric(summaries: Sequence[RunSummary]) -> str:
    for name in ("mae", "f1_macro", "f1_micro", "specificity", "valid_answer_rate"):
        if any(name in s.metrics for s in summaries):
            return name
    raise RecommendError("summaries carry no quality metric")


def build_candidates(
    summaries: Sequence[RunSummary],
    quotes: Sequence[InstanceQuote],
    bench_tflops: float,
    quality_metric: str,
    pricing: dict[str, PricingEntry] | None = None,
    latency_basis: str = "end_to_end",
) -> list[CandidatePlan]:
    """Every (summary x quote) plan, plus one online plan per priced model."""
    pricing = pricing or {}
    plans = []
    for s in summaries:
        measured = s.mean_latency if latency_basis == "end_to_end" else s.mean_latency_llm
        model = str(s.axes.get("model", ""))
        if model in pricing:
            cost = 1000 * online_cost_per_prompt(s.tokens_in_mean, s.tokens_out_mean, pricing[model])
            plans.append(CandidatePlan(s.run_id, dict(s.axes), ONLINE_PREFIX + model,
                                       s.mean_latency, cost, dict(s.metrics), quality_metric))
            continue
        for q in quotes:
            ok = feasible(s, q) and measured is not None and measured > 0
            if not ok:
                plans.append(CandidatePlan(s.run_id, dict(s.axes), q.name, None, None,
                                           dict(s.metrics), quality_metric, feasible=False))
                continue
            t = estimate_latency(measured, bench_tflops, q.tflops)
            if latency_basis != "end_to_end":
                # non-LLM stages are not rescaled
                t += s.mean_latency - measured
            plans.append(CandidatePlan(s.run_id, dict(s.axes), q.name, t,
                                       estimate_cost_per_kprompt(t, q.price),
                                       dict(s.metrics), quality_metric))
    return plans


def recommend(
    summaries: Sequence[RunSummary],
    quotes: Sequence[InstanceQuote],
    budget: float | None = None,
    quality_constraint: QualityConstraint | tuple | None = None,
    objectives: Sequence | None = None,
    bench: str | float = "bench",
    pricing: dict[str, PricingEntry] | None = None,
    quality_metric: str | None = None,
    latency_basis: str = "end_to_end",
) -> list[CandidatePlan]:
    """Ranked Pareto-optimal plans, cheapest first.

    ``bench`` names the quote of the server the summaries were measured on,
    or gives its TFLOPs directly.
    """
    if not summaries:
        raise NoSummariesError("no summaries")
    if not quotes and not pricing:
        raise RecommendError("no instance quotes")
    if isinstance(bench, str):
        match = [q for q in quotes if q.name == bench]
        if not match:
            raise RecommendError(f"benchmark instance {bench!r} not in quote catalog")
        bench_tflops = match[0].tflops
    else:
        bench_tflops = float(bench)
    if latency_basis not in ("end_to_end", "llm"):
        raise ValueError(f"unknown latency basis {latency_basis!r}")
    if isinstance(quality_constraint, tuple):
        quality_constraint = QualityConstraint.coerce(quality_constraint)
    quality_metric = quality_metric or _default_quality_metric(summaries)
    objectives = list(objectives or ("quality", "est_cost"))

    plans = build_candidates(summaries, quotes, bench_tflops, quality_metric, pricing, latency_basis)
    kept = []
    for p in plans:
        if not p.feasible:
            continue
        if budget is not None and p.est_cost > budget:
            continue
        if quality_constraint is not None and not quality_constraint.check(p.metrics.get(quality_constraint.metric)):
            continue
        try:
            [p.value(o if isinstance(o, str) else o[0]) for o in objectives]
        except KeyError as e:
            logger.warning("dropping plan: %s", e)
            continue
        kept.append(p)
    if not kept:
        raise NoFeasiblePlanError("no feasible plan satisfies the constraints")
    front = pareto_front(kept, objectives)
    return sorted(front, key=lambda p: p.est_cost)


def write_recommendation_json(path: str | os.PathLike, plans: Sequence[CandidatePlan]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([p.to_dict() for p in plans], fh, indent=2, sort_keys=True)
        fh.write("\n")


PARETO_AXES = ("model", "model_quantization", "embedding_quantization", "top_k", "chunk_size", "prompting_mode")


def write_pareto_csv(path: str | os.PathLike, plans: Sequence[CandidatePlan]) -> None:
    quality_metric = plans[0].quality_metric if plans else "quality"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "run_id", *PARETO_AXES, "instance", quality_metric, "est_time_s", "est_cost_per_kprompt"])
        for rank, p in enumerate(plans, 1):
            w.writerow([rank, p.run_id, *(p.axes.get(a, "") for a in PARETO_AXES), p.instance,
                        p.quality, f"{p.est_time:.6f}", f"{p.est_cost:.6f}"])
