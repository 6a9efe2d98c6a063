from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vulnaudit.core import EvidenceVector
from vulnaudit.fusion import FusionWeights, Thresholds, decide, final_action, fuse, interim_score

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
evidence = st.builds(EvidenceVector, unit, unit, unit, unit, unit, unit)


def test_default_weights_and_thresholds():
    assert FusionWeights().as_list() == [0.20, 0.15, 0.15, 0.25, 0.25, 0.30]
    assert (Thresholds().tau_high, Thresholds().tau_low) == (0.82, 0.48)


@pytest.mark.parametrize(
    "values",
    [[0.2, 0.2, 0.2, 0.2, 0.3, 0.3], [-0.1, 0.3, 0.2, 0.3, 0.3, 0.1], [0.2, 0.15, 0.15, 0.25, 0.25, 1.2], [0.2] * 5],
)
def test_weight_validation(values):
    with pytest.raises(ValueError):
        FusionWeights.from_list(values)


def test_threshold_order():
    with pytest.raises(ValueError):
        Thresholds(0.4, 0.5)
    with pytest.raises(ValueError):
        Thresholds(0.5, 0.5)


def test_fuse_hand_value():
    ev = EvidenceVector(1.0, 0.5, 0.2, 0.8, 1.0, 0.5)
    assert fuse(ev, FusionWeights()) == pytest.approx(0.2 + 0.075 + 0.03 + 0.2 + 0.25 - 0.15)


@given(evidence)
def test_fuse_is_bounded_and_monotone(ev):
    w = FusionWeights()
    score = fuse(ev, w)
    assert 0.0 <= score <= 1.0
    stronger = EvidenceVector(ev.risk0, ev.e_stat, ev.e_ctx, 1.0, ev.e_dyn, ev.e_ctr)
    weaker = EvidenceVector(ev.risk0, ev.e_stat, ev.e_ctx, ev.e_agt, ev.e_dyn, 1.0)
    assert fuse(stronger, w) >= score >= fuse(weaker, w)


@given(unit, unit, unit)
def test_interim_is_normalised_partial_sum(r, s, c):
    w = FusionWeights()
    assert interim_score(r, s, c, w) == pytest.approx((0.2 * r + 0.15 * s + 0.15 * c) / 0.5)
    assert interim_score(1, 1, 1, w) == pytest.approx(1.0)


def test_interim_with_zero_mass():
    w = FusionWeights(0.0, 0.0, 0.0, 0.5, 0.5, 0.3)
    assert interim_score(1, 1, 1, w) == 0.0


@given(unit, st.sampled_from(["low", "medium", "high", "critical"]))
def test_decide_bands(score, severity):
    thr = Thresholds()
    action = decide(score, severity, thr)
    if score >= 0.82:
        assert action == "accept_early"
    elif score < 0.48:
        assert action == "reject"
    elif severity in ("high", "critical"):
        assert action == "verify_then_decide"
    else:
        assert action == "escalate"


def test_decide_boundaries():
    thr = Thresholds()
    assert decide(0.82, "low", thr) == "accept_early"
    assert decide(0.48, "low", thr) == "escalate"
    assert decide(0.4799, "critical", thr) == "reject"
    assert final_action(0.48, thr) == "accept"
    assert final_action(0.47, thr) == "reject"
