from __future__ import annotations

import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vulnaudit.core import (
    CaseResult,
    EvidenceVector,
    Finding,
    InvalidValueError,
    Region,
    RuleHit,
    SignalSet,
    SourceLocation,
    case_score_of,
    clamp_unit,
    format_float,
    parse_report,
    render_report,
    write_report,
)

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_clamp_stays_in_unit_interval(x):
    y = clamp_unit(x)
    assert 0.0 <= y <= 1.0
    assert clamp_unit(y) == y


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf, "0.5", None, True])
def test_clamp_rejects_non_finite(bad):
    with pytest.raises(InvalidValueError):
        clamp_unit(bad)


def test_location_validation():
    with pytest.raises(InvalidValueError):
        SourceLocation("a.c", 0, 3)
    with pytest.raises(InvalidValueError):
        SourceLocation("a.c", 5, 4)
    with pytest.raises(InvalidValueError):
        SourceLocation("a.c", 1, 1, side="both")
    loc = SourceLocation("a.c", 3, 7)
    assert loc.overlaps(SourceLocation("a.c", 7, 9))
    assert not loc.overlaps(SourceLocation("b.c", 3, 7))
    assert loc.contains_line(3) and not loc.contains_line(8)


def test_evidence_channels_are_unit_bounded():
    with pytest.raises(InvalidValueError):
        EvidenceVector(e_agt=1.5)
    with pytest.raises(InvalidValueError):
        Finding("x", SourceLocation("a.c", 1, 1), "", 1.2, "high")
    with pytest.raises(InvalidValueError):
        Finding("x", SourceLocation("a.c", 1, 1), "", 0.5, "urgent")


def test_region_rejects_hits_outside_its_span():
    loc = SourceLocation("a.c", 10, 12)
    with pytest.raises(InvalidValueError):
        Region("r", "function", loc, "x", SignalSet(0.5, rule_hits=(RuleHit("c.strcpy", 20, "strcpy"),)))
    with pytest.raises(InvalidValueError):
        Region("r", "function", loc, "")
    with pytest.raises(InvalidValueError):
        Region("r", "file", loc, "x")


def test_hunk_code_strips_markers():
    r = Region("h", "hunk", SourceLocation("a.c", 5, 7), " keep\n+added\n-gone")
    assert r.code_lines() == [(5, "keep"), (6, "added"), (7, "gone")]


def test_case_result_invariants():
    with pytest.raises(InvalidValueError):
        CaseResult("s", "benign", 0.0, stage_path=("triage",), tokens_used=5, stage_tokens={"triage": 4})
    with pytest.raises(InvalidValueError):
        CaseResult("s", "benign", 0.0, stage_path=("triage",), early_exit=False)
    with pytest.raises(InvalidValueError):
        CaseResult("s", "benign", 0.0, stage_path=("triage", "analysis"), verified=True)
    with pytest.raises(InvalidValueError):
        CaseResult("s", "maybe", 0.0)
    full = ("triage", "context", "analysis", "verification", "fusion")
    r = CaseResult("s", "vulnerable", 0.9, stage_path=full, early_exit=False, verified=True)
    assert not r.early_exit


def test_format_float_rounds_half_even():
    assert format_float(0.5) == "0.500000"
    assert format_float(0.0000005) == "0.000000"
    assert format_float(0.0000015) == "0.000002"
    assert format_float(-0.0000001) == "0.000000"
    with pytest.raises(InvalidValueError):
        format_float(math.nan)


def _finding(score, line=3):
    return Finding(
        "security/buffer-overflow",
        SourceLocation("src/a.c", line, line + 1),
        "strcpy into a fixed buffer",
        score,
        "high",
        remediation="bound the copy",
        score=score,
        evidence=EvidenceVector(risk0=0.5, e_stat=0.6, e_agt=score),
        action="accept",
        agents=("security", "semantic"),
    )


findings = st.lists(unit.map(lambda s: _finding(round(s, 6))), max_size=4)


@given(findings, st.integers(min_value=0, max_value=10_000))
def test_report_round_trip(fs, tokens):
    case = CaseResult(
        "s1",
        "vulnerable" if fs else "benign",
        case_score_of(fs),
        tuple(fs),
        ("triage",),
        tokens,
        stage_tokens={"triage": tokens},
        max_risk0=0.25,
        warnings=("note",),
    )
    text = render_report([case], "abc")
    digest, back = parse_report(text)
    assert digest == "abc"
    assert render_report(back, digest) == text


def test_write_report_returns_bytes_written():
    sink = io.BytesIO()
    data = write_report([CaseResult("s", "benign", 0.0, stage_path=("triage",))], sink, "d")
    assert sink.getvalue() == data
    assert data.endswith(b"\n")
    with pytest.raises(InvalidValueError):
        parse_report(data.replace(b"vulnaudit/1", b"other/9"))
