"""Flat run tables and a dependency-free SVG scatter plot."""

from __future__ import annotations

import csv
import io
import json
from html import escape
from pathlib import Path
from typing import Sequence

from .config import AXES
from .monitor import RunSummary, read_summary

METRIC_COLUMNS = ("mae", "specificity", "f1_macro", "f1_micro", "valid_answer_rate")
REPORT_COLUMNS = (
    "run_id", *AXES, *METRIC_COLUMNS,
    "n_prompts", "n_errors", "mean_latency_s", "p95_latency_s", "mean_latency_llm_s",
    "peak_gpu_memory_bytes", "peak_host_memory_bytes", "tokens_in_total", "tokens_out_total",
)


def load_summaries(runs_dir: str | Path) -> list[RunSummary]:
    """All ``*.summary.json`` files in ``runs_dir``, sorted by file name."""
    return [read_summary(p) for p in sorted(Path(runs_dir).glob("*.summary.json"))]


def report_row(s: RunSummary) -> dict:
    row = {"run_id": s.run_id}
    row.update({a: s.axes.get(a, "unset") for a in AXES})
    metrics = dict(s.metrics, valid_answer_rate=s.valid_answer_rate)
    row.update({m: metrics.get(m) for m in METRIC_COLUMNS})
    row.update(
        n_prompts=s.n_prompts,
        n_errors=s.n_errors,
        mean_latency_s=s.mean_latency,
        p95_latency_s=s.p95_latency,
        mean_latency_llm_s=s.mean_latency_llm,
        peak_gpu_memory_bytes=s.peak_gpu_memory,
        peak_host_memory_bytes=s.peak_host_memory,
        tokens_in_total=s.tokens_in_total,
        tokens_out_total=s.tokens_out_total,
    )
    return row


def render_csv(summaries: Sequence[RunSummary]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for s in summaries:
        w.writerow({k: ("" if v is None else v) for k, v in report_row(s).items()})
    return buf.getvalue()


def render_json(summaries: Sequence[RunSummary]) -> str:
    return json.dumps([s.to_dict() for s in summaries], indent=2, sort_keys=True) + "\n"


def scatter_svg(
    points: Sequence[tuple[float, float]],
    highlight: Sequence[bool],
    x_label: str,
    y_label: str,
    labels: Sequence[str] | None = None,
    width: int = 640,
    height: int = 440,
) -> str:
    """Self-contained SVG scatter; highlighted points are drawn as triangles."""
    margin = 60
    if points:
        xs, ys = zip(*points)
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return margin + (x - x0) / (x1 - x0) * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{px(fx):.1f}" y="{height - margin + 15}" text-anchor="middle">{fx:.3g}</text>')
        out.append(f'<text x="{margin - 6}" y="{py(fy) + 4:.1f}" text-anchor="end">{fy:.3g}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="15" y="{height / 2}" text-anchor="middle" transform="rotate(-90 15 {height / 2})">{escape(y_label)}</text>'
    )
    for i, ((x, y), hi) in enumerate(zip(points, highlight)):
        cx, cy = px(x), py(y)
        title = f"<title>{escape(labels[i])}</title>" if labels else ""
        if hi:
            out.append(
                f'<polygon points="{cx:.1f},{cy - 6:.1f} {cx - 5:.1f},{cy + 4:.1f} {cx + 5:.1f},{cy + 4:.1f}" '
                f'fill="#d62728">{title}</polygon>'
            )
        else:
            out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="3" fill="#1f77b4" fill-opacity="0.6">{title}</circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summaries_svg(summaries: Sequence[RunSummary], metric: str | None = None) -> str:
    """Mean latency vs quality per run, non-dominated runs highlighted."""
    from .recommender import CandidatePlan, pareto_front

    if metric is None:
        metric = next((m for m in METRIC_COLUMNS if any(m in s.metrics for s in summaries)), "valid_answer_rate")
    plans = []
    for s in summaries:
        q = s.valid_answer_rate if metric == "valid_answer_rate" else s.metrics.get(metric)
        if q is None or s.mean_latency is None:
            continue
        plans.append(CandidatePlan(s.run_id, s.axes, "measured", s.mean_latency, None, {metric: q}, metric))
    front = {id(p) for p in pareto_front(plans, ("quality", "est_time"))} if plans else set()
    points = [(p.est_time, p.quality) for p in plans]
    labels = [f"{p.axes.get('model', '')} {p.run_id[:8]}" for p in plans]
    return scatter_svg(points, [id(p) in front for p in plans], "mean end-to-end latency (s)", metric, labels)


def plans_svg(plans, front) -> str:
    """Estimated cost vs quality for candidate plans."""
    on_front = {id(p) for p in front}
    feasible = [p for p in plans if p.feasible and p.quality is not None]
    points = [(p.est_cost, p.quality) for p in feasible]
    labels = [f"{p.axes.get('model', '')} @ {p.instance}" for p in feasible]
    metric = feasible[0].quality_metric if feasible else "quality"
    return scatter_svg(points, [id(p) in on_front for p in feasible], "est. cost ($/kPrompt)", metric, labels)

