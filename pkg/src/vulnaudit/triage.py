"""Stage I: three-signal risk screening and top-K retention."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Protocol, Sequence

from . import clike
from .core import SEVERITIES, Region, RuleHit, SignalSet, check_unit, clamp_unit

log = logging.getLogger(__name__)

REFERENCE_MEDIAN_LINES = 20


class ScorerError(RuntimeError):
    """The risk scorer backend could not produce a value."""


@dataclass(frozen=True)
class TriageCoefficients:
    alpha: float = 0.4
    beta: float = 0.2
    gamma: float = 0.4

    def __post_init__(self) -> None:
        vals = (self.alpha, self.beta, self.gamma)
        if any(v < 0 for v in vals) or abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"triage coefficients must be nonnegative and sum to 1, got {vals}")


@dataclass(frozen=True)
class RuleSpec:
    rule_id: str
    pattern: str
    weight: float
    category: str
    severity: str = "medium"
    regex: bool = True
    description: str = ""
    compiled: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        check_unit("weight", self.weight)
        if self.severity not in SEVERITIES:
            raise ValueError(f"rule {self.rule_id}: unknown severity {self.severity!r}")
        source = self.pattern if self.regex else re.escape(self.pattern)
        try:
            object.__setattr__(self, "compiled", re.compile(source))
        except re.error as exc:
            raise ValueError(f"rule {self.rule_id}: pattern does not compile: {exc}") from exc

    @property
    def is_security(self) -> bool:
        return self.category.startswith("security/")


def load_rules(path: str | None = None) -> list[RuleSpec]:
    """Load a rule pack (JSON array); the shipped pack when ``path`` is None."""
    if path is None:
        text = resources.files("vulnaudit.data").joinpath("rules.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return [RuleSpec(**d) for d in json.loads(text)]


def load_keywords() -> dict[str, list[str]]:
    text = resources.files("vulnaudit.data").joinpath("keywords.json").read_text(encoding="utf-8")
    return json.loads(text)


def static_signal(region: Region, rules: Sequence[RuleSpec]) -> tuple[float, tuple[RuleHit, ...]]:
    """Sum of the weights of distinct matching rules, clamped; every match is a hit."""
    if not rules:
        raise ValueError("static_signal needs at least one rule")
    numbered = region.code_lines()
    masked = clike.mask_code("\n".join(code for _, code in numbered), keep_strings=True).split("\n")
    hits: list[RuleHit] = []
    matched: dict[str, float] = {}
    for rule in rules:
        for (lineno, code), mline in zip(numbered, masked):
            if rule.compiled.search(mline):
                hits.append(RuleHit(rule.rule_id, lineno, code.strip()[:120]))
                matched[rule.rule_id] = rule.weight
    hits.sort(key=lambda h: (h.line, h.rule_id))
    return clamp_unit(sum(matched.values())), tuple(hits)


def _midrank(value: float, population: Sequence[float]) -> float:
    below = sum(1 for p in population if p < value)
    equal = sum(1 for p in population if p == value)
    return (below + 0.5 * equal) / len(population)


def meta_features(region: Region, snapshot) -> tuple[float, float, float]:
    """(length percentile, file commit-count percentile, diff churn ratio)."""
    nlines = region.location.line_end - region.location.line_start + 1
    lengths = [f.location.line_end - f.location.line_start + 1 for f in snapshot.functions]
    if lengths:
        length_pct = _midrank(nlines, lengths)
    else:
        length_pct = nlines / (nlines + REFERENCE_MEDIAN_LINES)
    record = snapshot.change_record(region.location.file)
    if record is not None and snapshot.change_log:
        commit_pct = _midrank(record.commits, [c.commits for c in snapshot.change_log])
    else:
        commit_pct = 0.0
    churn = region.churn if region.kind == "hunk" else 0.0
    return clamp_unit(length_pct), clamp_unit(commit_pct), clamp_unit(churn)


def blend_meta(features: Sequence[float]) -> float:
    return clamp_unit(sum(features) / len(features))


def meta_signal(region: Region, snapshot) -> float:
    return blend_meta(meta_features(region, snapshot))


class RiskScorer(Protocol):
    def score(self, region: Region) -> tuple[float, int]:
        """Return (raw risk, tokens consumed)."""


class KeywordRiskScorer:
    """Deterministic stand-in for a language-model risk estimate.

    Counts occurrences of risky identifiers; every tenth match adds 1.0.
    """

    def __init__(self, keywords: Sequence[str] | None = None, per_match: float = 0.1):
        self.keywords = frozenset(keywords if keywords is not None else load_keywords()["risky_keywords"])
        self.per_match = per_match

    def score(self, region: Region) -> tuple[float, int]:
        count = sum(1 for tok in clike.identifier_tokens(region.code()) if tok in self.keywords)
        return min(1.0, count * self.per_match), 0


@dataclass
class LmSignal:
    value: float
    tokens: int = 0
    warning: str | None = None


def lm_signal(region: Region, scorer: RiskScorer) -> LmSignal:
    try:
        raw, tokens = scorer.score(region)
        return LmSignal(clamp_unit(raw), int(tokens))
    except Exception as exc:  # backend failures degrade to a zero signal
        log.warning("risk scorer unavailable for %s: %s", region.id, exc)
        return LmSignal(0.0, 0, f"lm_signal_unavailable:{region.id}")


def risk0(signals: SignalSet, coeffs: TriageCoefficients) -> float:
    raw = coeffs.alpha * signals.s_stat + coeffs.beta * signals.s_meta + coeffs.gamma * signals.s_lm
    # convex weights keep this in [0, 1]; the clamp only absorbs rounding overshoot
    return clamp_unit(raw)


def select_top_k(scored: Sequence[tuple[Region, float]], k: int) -> list[Region]:
    """Highest-risk regions first; equal scores fall back to ascending region id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ordered = sorted(scored, key=lambda pair: (-pair[1], pair[0].id))
    return [region for region, _ in ordered[:k]]


@dataclass
class TriageResult:
    regions: list[Region]  # with signals attached
    risks: dict[str, float]
    selected: list[Region]
    tokens: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def max_risk0(self) -> float:
        return max((self.risks[r.id] for r in self.selected), default=0.0)


def triage(
    regions: Sequence[Region],
    snapshot,
    rules: Sequence[RuleSpec],
    scorer: RiskScorer | None,
    coeffs: TriageCoefficients,
    k: int,
) -> TriageResult:
    """Score every region and keep the top ``k``; ``scorer=None`` skips the LM signal."""
    scored_regions, risks, tokens, warnings = [], {}, 0, []
    for region in regions:
        s_stat, hits = static_signal(region, rules)
        s_meta = meta_signal(region, snapshot)
        if scorer is not None:
            lm = lm_signal(region, scorer)
            tokens += lm.tokens
            if lm.warning:
                warnings.append(lm.warning)
            s_lm = lm.value
        else:
            s_lm = 0.0
        scored = replace(region, signals=SignalSet(s_stat, s_meta, s_lm, hits))
        scored_regions.append(scored)
        risks[scored.id] = risk0(scored.signals, coeffs)
    selected = select_top_k([(r, risks[r.id]) for r in scored_regions], k)
    return TriageResult(scored_regions, risks, selected, tokens, warnings)
