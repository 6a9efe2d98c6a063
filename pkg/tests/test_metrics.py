from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vulnaudit.core import CaseResult, Finding, SourceLocation
from vulnaudit.metrics import (
    CSV_COLUMNS,
    InvalidInputError,
    UndefinedMetricError,
    auroc,
    average_ranks,
    compute_metrics,
    localisation,
    mean_reciprocal_rank,
    prf1,
    ranked_lines,
)


def _case(sid, verdict, score, findings=(), **kw):
    if kw.get("tokens_used"):
        kw["stage_tokens"] = {"analysis": kw["tokens_used"]}
    if kw.get("early_exit") is False:
        kw["stage_path"] = ("triage", "analysis", "verification", "fusion")
    return CaseResult(sid, verdict, score, tuple(findings), **kw)


def _f(file, start, end, score):
    return Finding("security/x", SourceLocation(file, start, end), "e", score, "high", score=score)


def test_prf1_counts():
    p = prf1([(0.9, True), (0.8, False), (0.1, True), (0.2, False)], 0.5)
    assert (p.precision, p.recall, p.f1) == (0.5, 0.5, 0.5) and not p.degenerate


def test_prf1_without_positive_predictions_is_flagged():
    p = prf1([(0.1, True), (0.2, False)], 0.5)
    assert p.degenerate and p.precision == 0.0 and p.f1 == 0.0
    with pytest.raises(InvalidInputError):
        prf1([], 0.5)


def test_average_ranks_share_ties():
    assert average_ranks([3.0, 1.0, 3.0, 2.0]) == [3.5, 1.0, 3.5, 2.0]
    assert average_ranks([]) == []


def test_auroc_hand_values_and_errors():
    assert auroc([0.9, 0.1], [True, False]) == 1.0
    assert auroc([0.1, 0.9], [True, False]) == 0.0
    assert auroc([0.5, 0.5], [True, False]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [True, True])
    with pytest.raises(InvalidInputError):
        auroc([0.1], [True, False])


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=30))
def test_auroc_is_a_probability(pairs):
    labels = [y for _, y in pairs]
    if all(labels) or not any(labels):
        return
    value = auroc([float(s) for s, _ in pairs], labels)
    flipped = auroc([-float(s) for s, _ in pairs], labels)
    assert 0.0 <= value <= 1.0
    assert value + flipped == pytest.approx(1.0)


def test_ranked_lines_expand_ranges_and_break_ties():
    case = _case("c", "vulnerable", 0.9, [_f("b.c", 5, 6, 0.7), _f("a.c", 9, 9, 0.7), _f("b.c", 6, 6, 0.9)])
    assert ranked_lines(case) == [("b.c", 6), ("a.c", 9), ("b.c", 5)]
    assert localisation(case, [("b.c", 6)]) == (1, 1, 1.0)
    assert localisation(case, [("b.c", 5)]) == (0, 1, pytest.approx(1 / 3))
    assert localisation(case, [("z.c", 1)]) == (0, 0, 0.0)
    with pytest.raises(InvalidInputError):
        localisation(case, [])


def test_mrr():
    assert mean_reciprocal_rank([1, 2, None, 4]) == pytest.approx((1 + 0.5 + 0.25) / 4)
    with pytest.raises(InvalidInputError):
        mean_reciprocal_rank([])


def test_compute_metrics_aggregates():
    results = [
        _case("a", "vulnerable", 0.9, [_f("repo/src/a.c", 4, 4, 0.9)], tokens_used=100, wall_time=2.0,
              early_exit=False, verified=True),
        _case("b", "benign", 0.2, tokens_used=0, wall_time=1.0),
        _case("c", "benign", 0.0, error="RuntimeError: x"),
        _case("d", "vulnerable", 0.6, [_f("d.c", 3, 3, 0.6)], tokens_used=50, wall_time=3.0,
              stage_path=("triage", "analysis", "fusion")),
    ]
    labels = [True, False, True, False]
    truths = [[("src/a.c", 4)], None, [("c.c", 1)], None]
    m = compute_metrics(results, labels, truths)
    assert (m.precision, m.recall) == (0.5, 0.5)
    # truth path is a suffix of the finding path
    assert m.n_localised == 2 and m.top1 == 0.5 and m.mrr == 0.5
    assert m.avg_tokens == 37.5 and m.avg_time == 1.5
    assert m.early_exit_rate == 0.5 and m.verification_rate == 0.25
    assert m.n_errors == 1 and m.auroc == 0.5
    assert set(CSV_COLUMNS) - {"preset", "config_digest"} <= set(m.as_dict())


def test_compute_metrics_edge_cases():
    with pytest.raises(InvalidInputError):
        compute_metrics([], [])
    with pytest.raises(InvalidInputError):
        compute_metrics([_case("a", "benign", 0.0)], [True, False])
    m = compute_metrics([_case("a", "benign", 0.0)], [True])
    assert m.auroc is None and m.top1 is None and m.precision_degenerate
