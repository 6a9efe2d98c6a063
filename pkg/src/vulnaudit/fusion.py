"""Evidence fusion and threshold decisions."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import EvidenceVector, check_unit, clamp_unit

ACTIONS = ("accept_early", "reject", "escalate", "verify_then_decide")
VERIFY_SEVERITIES = ("high", "critical")


@dataclass(frozen=True)
class FusionWeights:
    w1: float = 0.20
    w2: float = 0.15
    w3: float = 0.15
    w4: float = 0.25
    w5: float = 0.25
    w6: float = 0.30

    def __post_init__(self) -> None:
        vals = self.positive + (self.w6,)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"fusion weights must be finite and nonnegative, got {vals}")
        if abs(sum(self.positive) - 1.0) > 1e-9:
            raise ValueError(f"w1..w5 must sum to 1, got {sum(self.positive)!r}")
        check_unit("w6", self.w6)

    @property
    def positive(self) -> tuple[float, float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4, self.w5)

    @classmethod
    def from_list(cls, values) -> FusionWeights:
        if len(values) != 6:
            raise ValueError(f"expected six fusion weights, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_list(self) -> list[float]:
        return [self.w1, self.w2, self.w3, self.w4, self.w5, self.w6]


@dataclass(frozen=True)
class Thresholds:
    tau_high: float = 0.82
    tau_low: float = 0.48

    def __post_init__(self) -> None:
        check_unit("tau_high", self.tau_high)
        check_unit("tau_low", self.tau_low)
        if not self.tau_low < self.tau_high:
            raise ValueError(f"tau_low ({self.tau_low}) must be below tau_high ({self.tau_high})")


def fuse(ev: EvidenceVector, w: FusionWeights) -> float:
    raw = (
        w.w1 * ev.risk0
        + w.w2 * ev.e_stat
        + w.w3 * ev.e_ctx
        + w.w4 * ev.e_agt
        + w.w5 * ev.e_dyn
        - w.w6 * ev.e_ctr
    )
    return clamp_unit(raw)


def interim_score(risk0: float, e_stat: float, e_ctx: float, w: FusionWeights) -> float:
    """Pre-analysis score from the three channels known before any agent runs.

    The partial sum is divided by the weight mass of those channels so that it
    lives on the same [0, 1] scale as the thresholds; without the division the
    ceiling would be w1 + w2 + w3 and early acceptance could never trigger.
    """
    mass = w.w1 + w.w2 + w.w3
    if mass <= 0:
        return 0.0
    return clamp_unit((w.w1 * risk0 + w.w2 * e_stat + w.w3 * e_ctx) / mass)


def decide(score: float, severity: str, thresholds: Thresholds) -> str:
    if score >= thresholds.tau_high:
        return "accept_early"
    if score < thresholds.tau_low:
        return "reject"
    if severity in VERIFY_SEVERITIES:
        return "verify_then_decide"
    return "escalate"


def final_action(score: float, thresholds: Thresholds) -> str:
    """Label once all evidence is in: the low threshold is the acceptance bar."""
    return "accept" if score >= thresholds.tau_low else "reject"
