"""Agent interface, dispatch, prompt rendering and cross-agent aggregation."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Protocol, Sequence

from ..context import ContextBundle
from ..core import Finding, Region, SignalSet, SourceLocation, check_unit, severity_rank
from ..triage import RuleSpec, load_keywords, load_rules

AGENT_IDS = ("router", "semantic", "security", "logic", "sceptic")
ANALYSTS = ("semantic", "security", "logic")


class AgentStateError(RuntimeError):
    """Aggregation was asked for on an impossible dispatch."""


@dataclass(frozen=True)
class FindingKey:
    issue_type: str
    file: str
    line_start: int
    line_end: int

    @classmethod
    def of(cls, finding: Finding) -> FindingKey:
        loc = finding.location
        return cls(finding.issue_type, loc.file, loc.line_start, loc.line_end)

    def matches(self, other: FindingKey) -> bool:
        return (
            self.issue_type == other.issue_type
            and self.file == other.file
            and self.line_start <= other.line_end
            and other.line_start <= self.line_end
        )

    def __str__(self) -> str:
        return f"{self.issue_type}@{self.file}:{self.line_start}-{self.line_end}"


@dataclass(frozen=True)
class CounterClaim:
    target: FindingKey
    rebuttal: str
    strength: float

    def __post_init__(self) -> None:
        check_unit("strength", self.strength)


@dataclass(frozen=True)
class AgentReport:
    agent_id: str
    findings: tuple[Finding, ...] = ()
    counter_claims: tuple[CounterClaim, ...] = ()
    confidence: float = 0.0
    tokens_used: int = 0
    unavailable: bool = False
    facts: tuple[str, ...] = ()  # tagged strings for repository memory, sceptic only
    note: str = ""

    def __post_init__(self) -> None:
        if self.agent_id not in AGENT_IDS:
            raise ValueError(f"unknown agent id {self.agent_id!r}")
        check_unit("confidence", self.confidence)
        if self.tokens_used < 0:
            raise ValueError("tokens_used must be nonnegative")
        if self.agent_id == "sceptic" and self.findings:
            raise ValueError("sceptic reports carry no findings")
        if self.agent_id != "sceptic" and self.counter_claims:
            raise ValueError("analyst reports carry no counter claims")

    @classmethod
    def unavailable_report(cls, agent_id: str, tokens: int = 0, note: str = "") -> AgentReport:
        return cls(agent_id, confidence=0.0, tokens_used=tokens, unavailable=True, note=note)


@dataclass(frozen=True)
class MemoryView:
    """Read-only slice of memory handed to agents."""

    project: str = ""
    facts: frozenset[str] = frozenset()

    def sanitizers(self) -> set[str]:
        return {f.split(":", 1)[1] for f in self.facts if f.startswith("sanitizer:")}


class AgentBackend(Protocol):
    def run(
        self,
        agent_id: str,
        region: Region,
        bundle: ContextBundle,
        memory: MemoryView,
        claims: Sequence[Finding] = (),
        scope: Region | None = None,
    ) -> AgentReport:
        """Analyse ``region``.

        ``claims`` are the analysts' findings (sceptic only). ``scope`` is the
        enclosing function when the region is a diff hunk; backends may read it
        but must only report lines inside the region.
        """


# --------------------------------------------------------------------------- #
# Dispatch
# --------------------------------------------------------------------------- #


@lru_cache(maxsize=1)
def control_flow_words() -> frozenset[str]:
    return frozenset(load_keywords()["control_flow_keywords"])


@lru_cache(maxsize=1)
def default_rules() -> tuple[RuleSpec, ...]:
    return tuple(load_rules())


def has_control_flow_keyword(text: str) -> bool:
    words = control_flow_words()
    # substring match on identifiers so pthread_mutex_lock counts as "lock"
    for ident in re.findall(r"[A-Za-z_]\w*", text):
        low = ident.lower()
        if low in words or any(w in low.split("_") for w in words):
            return True
    return False


def route(region: Region, signals: SignalSet | None = None, rules: Sequence[RuleSpec] | None = None) -> list[str]:
    """Analysts to dispatch for a region; the sceptic always runs last."""
    signals = signals if signals is not None else region.signals
    categories = {r.rule_id: r.category for r in (rules if rules is not None else default_rules())}
    cats = [categories.get(h.rule_id, "") for h in signals.rule_hits]
    if any(c.startswith("security/") for c in cats):
        agents = ["security", "semantic"]
    elif any(c.startswith("logic/") for c in cats) or has_control_flow_keyword(region.code()):
        agents = ["semantic", "logic"]
    else:
        agents = ["semantic", "security", "logic"]
    return agents + ["sceptic"]


# --------------------------------------------------------------------------- #
# Aggregation
# --------------------------------------------------------------------------- #


def analyst_reports(reports: Sequence[AgentReport]) -> list[AgentReport]:
    return [r for r in reports if r.agent_id in ANALYSTS]


def agreement_score(reports: Sequence[AgentReport], key: FindingKey) -> float:
    """Summed per-analyst confidence in ``key`` over the number of analysts dispatched."""
    analysts = analyst_reports(reports)
    if not analysts:
        raise AgentStateError("agreement needs at least one dispatched analyst")
    total = 0.0
    for report in analysts:
        best = max((f.confidence for f in report.findings if FindingKey.of(f).matches(key)), default=0.0)
        total += best
    return min(1.0, total / len(analysts))


def counter_score(reports: Sequence[AgentReport], key: FindingKey) -> float:
    return max(
        (c.strength for r in reports if r.agent_id == "sceptic" for c in r.counter_claims if c.target.matches(key)),
        default=0.0,
    )


def merge_findings(reports: Sequence[AgentReport]) -> list[tuple[Finding, tuple[str, ...]]]:
    """One representative per group of agreeing analyst findings.

    The representative is the most confident finding (then the most severe,
    then the earliest); the tuple names every analyst that asserted it.
    """
    pool = []
    for report in analyst_reports(reports):
        for f in report.findings:
            pool.append((report.agent_id, f))
    pool.sort(
        key=lambda af: (
            -af[1].confidence,
            -severity_rank(af[1].severity),
            af[1].location.file,
            af[1].location.line_start,
            af[1].issue_type,
            af[0],
        )
    )
    merged: list[tuple[Finding, list[str]]] = []
    for agent, f in pool:
        key = FindingKey.of(f)
        for rep, agents in merged:
            if FindingKey.of(rep).matches(key):
                if agent not in agents:
                    agents.append(agent)
                break
        else:
            merged.append((f, [agent]))
    merged.sort(key=lambda fa: (fa[0].location.file, fa[0].location.line_start, fa[0].issue_type))
    return [(f, tuple(sorted(agents))) for f, agents in merged]


# --------------------------------------------------------------------------- #
# Prompts
# --------------------------------------------------------------------------- #

_TEMPLATES: dict[str, Template] = {}


def prompt_template(role: str) -> Template:
    if role not in _TEMPLATES:
        text = resources.files("vulnaudit.data").joinpath("prompts", f"{role}.txt").read_text(encoding="utf-8")
        _TEMPLATES[role] = Template(text)
    return _TEMPLATES[role]


def numbered_listing(region: Region) -> str:
    return "\n".join(f"{no:5d}  {code}" for no, code in region.code_lines())


def render_findings(findings: Sequence[Finding]) -> str:
    # confidences are withheld on purpose so the sceptic is not anchored by them
    if not findings:
        return "(none)"
    return "\n".join(
        f"- {f.issue_type} at {f.location.file}:{f.location.line_start}-{f.location.line_end}: {f.evidence_summary}"
        for f in findings
    )


def render_agent_prompt(
    role: str,
    region: Region,
    bundle: ContextBundle,
    memory: MemoryView,
    claims: Sequence[Finding] = (),
) -> str:
    loc = region.location
    values = {
        "region_kind": region.kind,
        "file": loc.file,
        "line_start": loc.line_start,
        "line_end": loc.line_end,
        "listing": numbered_listing(region),
        "context": bundle.render() or "(none)",
        "facts": "\n".join(sorted(memory.facts)) or "(none)",
        "findings": render_findings(claims),
        "reply": prompt_template("_reply_analyst").template.strip(),
    }
    return prompt_template(role).substitute(values)


def fingerprint(region: Region, bundle: ContextBundle) -> str:
    """Cache key for session memory: changes whenever the code or its context changes."""
    h = hashlib.sha256(region.text.encode("utf-8"))
    h.update(b"\0" + region.location.file.encode("utf-8"))
    h.update(b"\0" + bundle.digest().encode("ascii"))
    return h.hexdigest()


@dataclass
class CallCounter:
    """Counts real backend invocations, used to check memory reuse."""

    calls: dict[str, int] = field(default_factory=dict)

    def hit(self, agent_id: str) -> None:
        self.calls[agent_id] = self.calls.get(agent_id, 0) + 1

    @property
    def total(self) -> int:
        return sum(self.calls.values())


def finding_at(
    issue_type: str,
    region: Region,
    line: int,
    summary: str,
    confidence: float,
    severity: str,
    remediation: str | None = None,
    line_end: int | None = None,
) -> Finding:
    loc = region.location
    end = max(line_end or line, line)
    return Finding(
        issue_type=issue_type,
        location=SourceLocation(loc.file, line, end, loc.side),
        evidence_summary=summary,
        confidence=confidence,
        severity=severity,
        remediation=remediation,
    )
