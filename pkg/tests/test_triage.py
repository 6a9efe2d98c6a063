from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vulnaudit.core import Region, SignalSet, SourceLocation
from vulnaudit.ingest import RepoSnapshot, build_snapshot, function_region
from vulnaudit.triage import (
    KeywordRiskScorer,
    RuleSpec,
    TriageCoefficients,
    blend_meta,
    lm_signal,
    load_rules,
    meta_features,
    risk0,
    select_top_k,
    static_signal,
    triage,
)

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)

COPY = """int copy_name(char *dst, const char *src)
{
    char tmp[16];
    strcpy(tmp, src);
    strcpy(dst, tmp);
    return 0;
}"""


def _region(text, rid="r", start=1):
    return Region(rid, "function", SourceLocation("a.c", start, start + text.count("\n")), text)


def test_shipped_rules_load():
    rules = load_rules()
    assert rules and len({r.rule_id for r in rules}) == len(rules)
    assert any(r.is_security for r in rules) and any(r.category.startswith("logic/") for r in rules)


def test_rule_validation():
    with pytest.raises(ValueError):
        RuleSpec("x", "(", 0.5, "security/x")
    with pytest.raises(ValueError):
        RuleSpec("x", "a", 1.5, "security/x")
    with pytest.raises(ValueError):
        RuleSpec("x", "a", 0.5, "security/x", severity="dire")
    assert RuleSpec("x", "a(b", 0.5, "security/x", regex=False).compiled.search("a(b")


def test_static_signal_counts_distinct_rules_once():
    rules = [RuleSpec("c.strcpy", r"\bstrcpy\s*\(", 0.3, "security/overflow")]
    s, hits = static_signal(_region(COPY, start=10), rules)
    assert s == pytest.approx(0.3)
    assert [h.line for h in hits] == [13, 14]


def test_static_signal_ignores_comments():
    rules = [RuleSpec("c.strcpy", r"\bstrcpy\s*\(", 0.3, "security/overflow")]
    s, hits = static_signal(_region("int f(void)\n{\n    /* strcpy(a, b); */\n    return 0;\n}"), rules)
    assert s == 0.0 and hits == ()
    with pytest.raises(ValueError):
        static_signal(_region("x"), [])


@given(st.lists(unit, min_size=1, max_size=6))
def test_static_signal_is_clamped_sum(weights):
    rules = [RuleSpec(f"r{i}", r"\bcall\b", w, "security/x") for i, w in enumerate(weights)]
    s, _ = static_signal(_region("call;"), rules)
    assert s == pytest.approx(min(1.0, sum(weights)))


def test_meta_features_without_repo():
    length, commits, churn = meta_features(_region(COPY), RepoSnapshot.empty())
    assert length == pytest.approx(7 / 27)
    assert commits == 0.0 and churn == 0.0
    assert blend_meta((0.3, 0.6, 0.9)) == pytest.approx(0.6)


def test_meta_length_percentile_within_repo(fixture_repo):
    snap = build_snapshot(fixture_repo)
    code = (fixture_repo / "src/parse.c").read_text().split("\n", 3)[3]
    length, _, _ = meta_features(function_region("s", code, snap), snap)
    # lengths are 5, 9, 8 and 7 lines; the 7-line target has one shorter and ties itself
    assert length == pytest.approx((1 + 0.5 * 1) / 4)


def test_keyword_scorer_is_ten_percent_per_match():
    scorer = KeywordRiskScorer(["strcpy", "system"])
    assert scorer.score(_region(COPY)) == (pytest.approx(0.2), 0)
    assert scorer.score(_region("strcpy " * 20)) == (1.0, 0)


class _Broken:
    def score(self, region):
        raise TimeoutError("backend down")


def test_lm_failure_degrades_to_zero_with_warning():
    sig = lm_signal(_region(COPY, rid="r7"), _Broken())
    assert sig.value == 0.0 and sig.warning == "lm_signal_unavailable:r7"


@given(unit, unit, unit, unit, unit, unit)
def test_risk0_is_a_convex_blend(a, b, g, s1, s2, s3):
    total = a + b + g
    if total == 0:
        return
    alpha, beta = a / total, b / total
    coeffs = TriageCoefficients(alpha, beta, max(0.0, 1 - alpha - beta))
    r = risk0(SignalSet(s1, s2, s3), coeffs)
    assert min(s1, s2, s3) - 1e-12 <= r <= max(s1, s2, s3) + 1e-12


def test_coefficients_must_sum_to_one():
    with pytest.raises(ValueError):
        TriageCoefficients(0.5, 0.5, 0.5)


@given(st.lists(st.tuples(st.integers(0, 50), st.sampled_from([0.1, 0.5, 0.9])), min_size=1, max_size=20, unique_by=lambda p: p[0]), st.integers(1, 25))
def test_top_k_properties(pairs, k):
    scored = [(_region("x", rid=f"r{i:02d}"), s) for i, s in pairs]
    top = select_top_k(scored, k)
    assert len(top) == min(k, len(scored))
    scores = {r.id: s for r, s in scored}
    chosen = [scores[r.id] for r in top]
    assert chosen == sorted(chosen, reverse=True)
    if len(top) < len(scored):
        assert min(chosen) >= max(s for r, s in scored if r not in top)


def test_top_k_rejects_nonpositive_k():
    with pytest.raises(ValueError):
        select_top_k([], 0)


def test_triage_attaches_signals_and_selects():
    regions = [_region(COPY, rid="a"), _region("int z(void)\n{\n    return 0;\n}", rid="b")]
    result = triage(regions, RepoSnapshot.empty(), load_rules(), KeywordRiskScorer(), TriageCoefficients(), 1)
    assert [r.id for r in result.selected] == ["a"]
    assert result.regions[0].signals.rule_hits
    assert result.max_risk0 == result.risks["a"] > result.risks["b"]
    no_lm = triage(regions, RepoSnapshot.empty(), load_rules(), None, TriageCoefficients(), 2)
    assert all(r.signals.s_lm == 0.0 for r in no_lm.regions)
