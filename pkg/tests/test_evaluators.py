import random

import pytest
from hypothesis import given, strategies as st

from cebench.evaluators import (
    NLI_CLASSES,
    NliPrediction,
    evaluate,
    extract,
    extract_nli_label,
    extract_score,
    f1,
    mae,
    specificity,
    task_for_metrics,
    valid_answer_rate,
)

AMBIGUOUS = (
    "Based on the provided contract, it's unclear whether the hypothesis "
    "'Some obligations of Agreement may survive termination' is entailed or "
    "contradicted by the contract. There is not enough information to decide."
)


@pytest.mark.parametrize("text, want", [
    ("score: 7", 7),
    ("Score: 12, because the patient reports anhedonia", 12),
    ("I cannot determine a value", None),
    ("SCORE=3", 3),
    ("final score - 15\nscore: 2", 15),
    ("scoreboard 4", None),
    ("score:\n9", None),
])
def test_extract_score(text, want):
    assert extract_score(text).value == want


@pytest.mark.parametrize("text, label, low", [
    ("The hypothesis is entailed by section 3.", "entailment", False),
    ("This clause contradicts the hypothesis.", "contradiction", False),
    ("The topic is not mentioned anywhere.", "neutral", False),
    ("Neutral.", "neutral", False),
    (AMBIGUOUS, "entailment", True),
    ("It contradicts, rather than entails, the claim", "contradiction", True),
    ("no relevant language found", "invalid", False),
])
def test_extract_nli(text, label, low):
    p = extract_nli_label(text)
    assert (p.label, p.low_confidence) == (label, low)


def test_mae_examples():
    assert mae([3, 5], [1, 9]) == 3.0
    assert mae([4, 4], [4, 4]) == 0.0
    with pytest.raises(ValueError):
        mae([], [])
    with pytest.raises(ValueError):
        mae([1], [1, 2])


def test_specificity_examples():
    assert specificity([2, 15], [3, 20]) == 1.0
    assert specificity([12], [3]) == 0.0
    assert specificity([1, 2], [10, 24]) is None
    # TN: (4,5), (9,0); FP: (11,2), (10,9); positives ignored
    assert specificity([4, 11, 9, 10, 0], [5, 2, 0, 9, 18]) == 0.5


def test_f1_hand_computed():
    preds = [NliPrediction("entailment"), NliPrediction("entailment"), NliPrediction("contradiction")]
    labels = ["entailment", "contradiction", "contradiction"]
    assert f1(preds, labels) == pytest.approx(2 / 3, abs=1e-12)
    assert f1(preds, labels, "micro") == pytest.approx(2 / 3, abs=1e-12)


def test_f1_perfect():
    labels = ["entailment", "contradiction", "neutral", "neutral"]
    assert f1(labels, labels) == 1.0 == f1(labels, labels, "micro")


def test_f1_three_classes_with_invalid():
    preds = ["entailment", "contradiction", "contradiction", "neutral", "entailment", None]
    labels = ["entailment", "entailment", "contradiction", "neutral", "neutral", "entailment"]
    # E: tp1 fn2 fp1 -> P=1/2 R=1/3 F=.4 (the invalid answer is a miss, not a false positive)
    # C: tp1 fn0 fp1 -> P=1/2 R=1 F=2/3
    # N: tp1 fn1 fp0 -> P=1 R=1/2 F=2/3
    macro = (0.4 + 2 / 3 + 2 / 3) / 3
    assert f1(preds, labels) == pytest.approx(macro, abs=1e-12)
    # micro: tp3, fp2, fn3 -> P=.6 R=.5
    assert f1(preds, labels, "micro") == pytest.approx(2 * 0.6 * 0.5 / 1.1, abs=1e-12)


def test_f1_errors():
    with pytest.raises(ValueError):
        f1([], [])
    with pytest.raises(ValueError):
        f1(["neutral"], ["maybe"])
    with pytest.raises(ValueError):
        f1(["neutral"], ["neutral"], "weighted")


def test_valid_answer_rate_mixed():
    assert valid_answer_rate([extract_score("score: 1"), extract_score("no"), 3, None]) == 0.5


def test_evaluate_excludes_invalid_from_mae():
    out = evaluate(["mae", "specificity", "valid_answer_rate"], [3, None, 12, 0], [1, 20, 14, 0])
    assert out["mae"] == pytest.approx(4 / 3)
    assert out["mae_excluded"] == 1.0
    assert out["specificity"] == 1.0
    assert out["valid_answer_rate"] == 0.75


def test_evaluate_leaves_out_undefined():
    assert "specificity" not in evaluate(["specificity"], [12], [15])


def test_task_routing():
    assert task_for_metrics(["mae"]) == "score"
    assert task_for_metrics(["valid_answer_rate", "f1_micro"]) == "nli"
    assert extract("nli", "no idea") is None
    assert extract("score", "score 3") == 3


scores = st.lists(st.tuples(st.integers(0, 24), st.integers(0, 24)), min_size=1, max_size=60)
nli_pairs = st.lists(st.tuples(st.sampled_from(NLI_CLASSES + (None,)), st.sampled_from(NLI_CLASSES)),
                     min_size=1, max_size=60)


@given(scores)
def test_mae_properties(pairs):
    p, y = zip(*pairs)
    m = mae(p, y)
    assert m >= 0
    assert (m == 0) == (list(p) == list(y))
    assert m == mae(y, p)


@given(scores)
def test_specificity_range(pairs):
    p, y = zip(*pairs)
    s = specificity(p, y)
    assert s is None or 0 <= s <= 1


@given(nli_pairs, st.sampled_from(["macro", "micro"]))
def test_f1_range(pairs, avg):
    p, y = zip(*pairs)
    assert 0 <= f1(p, y, avg) <= 1


@given(scores, nli_pairs, st.randoms(use_true_random=False))
def test_permutation_invariance(spairs, npairs, rnd: random.Random):
    sp, sy = zip(*spairs)
    np_, ny = zip(*npairs)
    s_shuf = spairs[:]
    n_shuf = npairs[:]
    rnd.shuffle(s_shuf)
    rnd.shuffle(n_shuf)
    sp2, sy2 = zip(*s_shuf)
    np2, ny2 = zip(*n_shuf)
    assert mae(sp, sy) == mae(sp2, sy2)
    assert specificity(sp, sy) == specificity(sp2, sy2)
    for avg in ("macro", "micro"):
        assert f1(np_, ny, avg) == f1(np2, ny2, avg)


@given(st.text(max_size=100))
def test_extraction_idempotent(text):
    assert extract_score(text) == extract_score(text)
    assert extract_nli_label(text) == extract_nli_label(text)
