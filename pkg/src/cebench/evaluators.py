"""Prediction extraction and quality metrics.

Score tasks (PHQ-8 style) parse ``score: x`` and report MAE and specificity;
NLI tasks parse one of entailment / contradiction / neutral and report F1.
Invalid answers are values, never exceptions.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Sequence

logger = logging.getLogger(__name__)

NLI_CLASSES = ("entailment", "contradiction", "neutral")
INVALID = "invalid"
HIGHER_IS_BETTER = {"specificity", "f1_macro", "f1_micro", "valid_answer_rate"}

_SCORE = re.compile(r"\bscore[^\w\n]*(\d+)", re.IGNORECASE)
_NLI_KEYWORDS = (
    ("entailment", re.compile(r"entail")),
    ("contradiction", re.compile(r"contradict")),
    ("neutral", re.compile(r"neutral|not mentioned")),
)


@dataclass(frozen=True)
class ScorePrediction:
    value: int | None = None

    @property
    def valid(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class NliPrediction:
    label: str = INVALID
    low_confidence: bool = False

    @property
    def valid(self) -> bool:
        return self.label != INVALID


def extract_score(response_text: str) -> ScorePrediction:
    m = _SCORE.search(response_text)
    return ScorePrediction(int(m.group(1)) if m else None)


def extract_nli_label(response_text: str) -> NliPrediction:
    """Earliest keyword wins; the answer is low-confidence if several classes appear."""
    text = response_text.lower()
    hits = []
    for rank, (label, pat) in enumerate(_NLI_KEYWORDS):
        m = pat.search(text)
        if m:
            hits.append((m.start(), rank, label))
    if not hits:
        return NliPrediction()
    hits.sort()
    return NliPrediction(hits[0][2], low_confidence=len(hits) > 1)


def _check_pairs(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} predictions vs {len(b)} labels")
    if not a:
        raise ValueError("empty input")


def mae(predictions: Sequence[int], labels: Sequence[int]) -> float:
    _check_pairs(predictions, labels)
    return math.fsum(abs(p - y) for p, y in zip(predictions, labels)) / len(labels)


def specificity(pred_scores: Sequence[int], label_scores: Sequence[int], threshold: int = 10) -> float | None:
    """TN / (TN + FP) after binarizing both sides at ``score >= threshold``.

    Returns None when no label is negative.
    """
    _check_pairs(pred_scores, label_scores)
    tn = fp = 0
    for p, y in zip(pred_scores, label_scores):
        if y >= threshold:
            continue
        if p >= threshold:
            fp += 1
        else:
            tn += 1
    if tn + fp == 0:
        return None
    return tn / (tn + fp)


def _label_of(p) -> str:
    return p.label if isinstance(p, NliPrediction) else (p or INVALID)


def f1(predictions: Sequence, labels: Sequence[str], averaging: str = "macro") -> float:
    """F1 over the three NLI classes.

    Invalid predictions are a miss for the true class and a false positive
    for none. Macro averaging skips classes that have no support in ``labels``.
    """
    _check_pairs(predictions, labels)
    preds = [_label_of(p) for p in predictions]
    tp = dict.fromkeys(NLI_CLASSES, 0)
    fp = dict.fromkeys(NLI_CLASSES, 0)
    fn = dict.fromkeys(NLI_CLASSES, 0)
    for p, y in zip(preds, labels):
        if y not in NLI_CLASSES:
            raise ValueError(f"unknown label {y!r}")
        if p == y:
            tp[y] += 1
        else:
            fn[y] += 1
            if p in NLI_CLASSES:
                fp[p] += 1

    def _f1(t, f_p, f_n):
        prec = t / (t + f_p) if t + f_p else 0.0
        rec = t / (t + f_n) if t + f_n else 0.0
        return 2 * prec * rec / (prec + rec) if prec + rec else 0.0

    if averaging == "micro":
        return _f1(sum(tp.values()), sum(fp.values()), sum(fn.values()))
    if averaging != "macro":
        raise ValueError(f"unknown averaging {averaging!r}")
    present = [c for c in NLI_CLASSES if tp[c] + fn[c] > 0]
    skipped = set(NLI_CLASSES) - set(present)
    if skipped:
        logger.info("macro-F1: classes without support excluded: %s", sorted(skipped))
    return math.fsum(_f1(tp[c], fp[c], fn[c]) for c in present) / len(present)


def valid_answer_rate(predictions: Sequence) -> float:
    if not predictions:
        raise ValueError("empty input")
    ok = 0
    for p in predictions:
        if isinstance(p, (ScorePrediction, NliPrediction)):
            ok += p.valid
        else:
            ok += p is not None and p != INVALID
    return ok / len(predictions)


def task_for_metrics(metric_names: Sequence[str]) -> str:
    """``score`` or ``nli``, by which metrics are requested."""
    if any(m.startswith("f1") for m in metric_names):
        return "nli"
    return "score"


def extract(task: str, response_text: str) -> int | str | None:
    """Prediction as a plain value (None when the answer is invalid)."""
    if task == "nli":
        p = extract_nli_label(response_text)
        return p.label if p.valid else None
    return extract_score(response_text).value


def evaluate(metric_names: Sequence[str], predictions: Sequence, labels: Sequence) -> dict[str, float]:
    """Compute the named metrics. ``predictions`` hold plain values or None.

    MAE and specificity use valid predictions only; metrics that are
    undefined on the data are left out of the result.
    """
    out: dict[str, float] = {}
    labelled = [(p, y) for p, y in zip(predictions, labels) if y is not None]
    scored = [(p, y) for p, y in labelled if p is not None]
    for name in metric_names:
        if name == "valid_answer_rate":
            if predictions:
                out[name] = valid_answer_rate(predictions)
        elif name == "mae":
            if scored:
                out[name] = mae([p for p, _ in scored], [y for _, y in scored])
                out["mae_excluded"] = float(len(labelled) - len(scored))
        elif name == "specificity":
            if scored:
                v = specificity([p for p, _ in scored], [y for _, y in scored])
                if v is not None:
                    out[name] = v
        elif name in ("f1_macro", "f1_micro"):
            if labelled:
                out[name] = f1([p for p, _ in labelled], [y for _, y in labelled], name[3:])
        else:
            raise ValueError(f"unknown metric {name!r}")
    return out
