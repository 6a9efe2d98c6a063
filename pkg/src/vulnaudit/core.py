"""Shared domain types, unit-interval arithmetic and the findings report format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from decimal import ROUND_HALF_EVEN, Decimal
from typing import IO, Any, Iterable, Sequence

SCHEMA = "vulnaudit/1"

SEVERITIES = ("low", "medium", "high", "critical")
REGION_KINDS = ("function", "hunk")
SIDES = ("old", "new")
VERDICTS = ("vulnerable", "benign")
STAGES = ("triage", "context", "analysis", "verification", "fusion")


class InvalidValueError(ValueError):
    """A score or field is outside its permitted domain."""


def clamp_unit(x: float) -> float:
    """Clamp a finite real into [0, 1]."""
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise InvalidValueError(f"expected a finite real, got {x!r}")
    return min(1.0, max(0.0, float(x)))


def check_unit(name: str, x: float) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise InvalidValueError(f"{name} must be a finite real, got {x!r}")
    if x < 0.0 or x > 1.0:
        raise InvalidValueError(f"{name} must lie in [0, 1], got {x!r}")
    return float(x)


def severity_rank(severity: str) -> int:
    return SEVERITIES.index(severity)


@dataclass(frozen=True)
class SourceLocation:
    file: str
    line_start: int
    line_end: int
    side: str = "new"

    def __post_init__(self) -> None:
        if self.line_start < 1:
            raise InvalidValueError(f"line_start must be >= 1, got {self.line_start}")
        if self.line_end < self.line_start:
            raise InvalidValueError(
                f"line_end {self.line_end} precedes line_start {self.line_start}"
            )
        if self.side not in SIDES:
            raise InvalidValueError(f"unknown side {self.side!r}")

    def overlaps(self, other: SourceLocation) -> bool:
        return (
            self.file == other.file
            and self.line_start <= other.line_end
            and other.line_start <= self.line_end
        )

    def contains_line(self, line: int) -> bool:
        return self.line_start <= line <= self.line_end


@dataclass(frozen=True)
class EvidenceVector:
    risk0: float = 0.0
    e_stat: float = 0.0
    e_ctx: float = 0.0
    e_agt: float = 0.0
    e_dyn: float = 0.0
    e_ctr: float = 0.0

    def __post_init__(self) -> None:
        for f in fields(self):
            check_unit(f.name, getattr(self, f.name))


@dataclass(frozen=True)
class RuleHit:
    rule_id: str
    line: int
    excerpt: str


@dataclass(frozen=True)
class SignalSet:
    s_stat: float = 0.0
    s_meta: float = 0.0
    s_lm: float = 0.0
    rule_hits: tuple[RuleHit, ...] = ()

    def __post_init__(self) -> None:
        check_unit("s_stat", self.s_stat)
        check_unit("s_meta", self.s_meta)
        check_unit("s_lm", self.s_lm)


@dataclass(frozen=True)
class Region:
    id: str
    kind: str
    location: SourceLocation
    text: str
    signals: SignalSet = field(default_factory=SignalSet)
    function_name: str | None = None
    added_lines: frozenset[int] = frozenset()
    churn: float = 0.0

    def __post_init__(self) -> None:
        check_unit("churn", self.churn)
        if not self.text:
            raise InvalidValueError(f"region {self.id!r} has empty text")
        if self.kind not in REGION_KINDS:
            raise InvalidValueError(f"unknown region kind {self.kind!r}")
        for hit in self.signals.rule_hits:
            if not self.location.contains_line(hit.line):
                raise InvalidValueError(
                    f"rule hit {hit.rule_id} at line {hit.line} outside region {self.id}"
                )

    def code_lines(self) -> list[tuple[int, str]]:
        """Absolute line numbers paired with code, diff markers stripped for hunks."""
        out = []
        for offset, raw in enumerate(self.text.split("\n")):
            code = raw[1:] if self.kind == "hunk" and raw[:1] in ("+", " ", "-") else raw
            out.append((self.location.line_start + offset, code))
        return out

    def code(self) -> str:
        return "\n".join(code for _, code in self.code_lines())


@dataclass(frozen=True)
class Finding:
    issue_type: str
    location: SourceLocation
    evidence_summary: str
    confidence: float
    severity: str
    remediation: str | None = None
    error_tag: str | None = None
    score: float | None = None
    evidence: EvidenceVector | None = None
    action: str | None = None
    agents: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        check_unit("confidence", self.confidence)
        if self.severity not in SEVERITIES:
            raise InvalidValueError(f"unknown severity {self.severity!r}")
        if self.score is not None:
            check_unit("score", self.score)

    @property
    def accepted(self) -> bool:
        return self.action in ("accept", "accept_early")


@dataclass(frozen=True)
class CaseResult:
    sample_id: str
    verdict: str
    case_score: float
    findings: tuple[Finding, ...] = ()
    stage_path: tuple[str, ...] = ()
    tokens_used: int = 0
    wall_time: float = 0.0
    early_exit: bool = True
    verified: bool = False
    stage_tokens: dict[str, int] = field(default_factory=dict)
    max_risk0: float = 0.0
    interim_score: float | None = None
    dispatched: int = 0
    analyst_calls: int = 0
    backend_calls: int = 0
    warnings: tuple[str, ...] = ()
    error: str | None = None

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise InvalidValueError(f"unknown verdict {self.verdict!r}")
        check_unit("case_score", self.case_score)
        check_unit("max_risk0", self.max_risk0)
        for stage in self.stage_path:
            if stage not in STAGES:
                raise InvalidValueError(f"unknown stage {stage!r}")
        if self.tokens_used < 0 or any(v < 0 for v in self.stage_tokens.values()):
            raise InvalidValueError("token counters must be nonnegative")
        if self.tokens_used != sum(self.stage_tokens.values()):
            raise InvalidValueError(
                f"tokens_used {self.tokens_used} != sum of stage counters "
                f"{sum(self.stage_tokens.values())}"
            )
        omitted = not {"analysis", "verification"} <= set(self.stage_path)
        if self.early_exit != omitted:
            raise InvalidValueError("early_exit must be true iff analysis or verification was skipped")
        if self.verified != ("verification" in self.stage_path):
            raise InvalidValueError("verified must mirror the verification stage")


def case_score_of(findings: Iterable[Finding]) -> float:
    return max((f.score or 0.0 for f in findings), default=0.0)


# --------------------------------------------------------------------------- #
# Report serialization
# --------------------------------------------------------------------------- #

_QUANTUM = Decimal("0.000001")


def format_float(x: float) -> str:
    """Six decimal digits, round-half-even on the shortest decimal repr."""
    if not math.isfinite(x):
        raise InvalidValueError(f"cannot serialize non-finite value {x!r}")
    text = format(Decimal(repr(float(x))).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN), "f")
    return "0.000000" if text == "-0.000000" else text


def _encode(value: Any, indent: str, level: int) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    pad = "\n" + indent * (level + 1)
    end = "\n" + indent * level
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in value.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [_encode(v, indent, level + 1) for v in value]
        return "[" + pad + ("," + pad).join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def canonical_json(value: Any) -> str:
    return _encode(value, "  ", 0) + "\n"


def location_to_dict(loc: SourceLocation) -> dict[str, Any]:
    return {"file": loc.file, "line_start": loc.line_start, "line_end": loc.line_end, "side": loc.side}


def finding_to_dict(f: Finding) -> dict[str, Any]:
    ev = f.evidence
    return {
        "issue_type": f.issue_type,
        "location": location_to_dict(f.location),
        "evidence_summary": f.evidence_summary,
        "confidence": f.confidence,
        "severity": f.severity,
        "remediation": f.remediation,
        "error_tag": f.error_tag,
        "score": f.score,
        "action": f.action,
        "agents": list(f.agents),
        "evidence": None if ev is None else {k.name: getattr(ev, k.name) for k in fields(ev)},
    }


def case_to_dict(r: CaseResult) -> dict[str, Any]:
    return {
        "sample_id": r.sample_id,
        "verdict": r.verdict,
        "case_score": r.case_score,
        "findings": [finding_to_dict(f) for f in r.findings],
        "stage_path": list(r.stage_path),
        "tokens_used": r.tokens_used,
        "wall_time": r.wall_time,
        "early_exit": r.early_exit,
        "verified": r.verified,
        "stage_tokens": {k: r.stage_tokens[k] for k in STAGES if k in r.stage_tokens},
        "max_risk0": r.max_risk0,
        "interim_score": r.interim_score,
        "dispatched": r.dispatched,
        "analyst_calls": r.analyst_calls,
        "backend_calls": r.backend_calls,
        "warnings": list(r.warnings),
        "error": r.error,
    }


def finding_from_dict(d: dict[str, Any]) -> Finding:
    ev = d.get("evidence")
    return Finding(
        issue_type=d["issue_type"],
        location=SourceLocation(**d["location"]),
        evidence_summary=d["evidence_summary"],
        confidence=d["confidence"],
        severity=d["severity"],
        remediation=d.get("remediation"),
        error_tag=d.get("error_tag"),
        score=d.get("score"),
        evidence=None if ev is None else EvidenceVector(**ev),
        action=d.get("action"),
        agents=tuple(d.get("agents", ())),
    )


def case_from_dict(d: dict[str, Any]) -> CaseResult:
    return CaseResult(
        sample_id=d["sample_id"],
        verdict=d["verdict"],
        case_score=d["case_score"],
        findings=tuple(finding_from_dict(f) for f in d["findings"]),
        stage_path=tuple(d["stage_path"]),
        tokens_used=d["tokens_used"],
        wall_time=d["wall_time"],
        early_exit=d["early_exit"],
        verified=d["verified"],
        stage_tokens=dict(d.get("stage_tokens", {})),
        max_risk0=d.get("max_risk0", 0.0),
        interim_score=d.get("interim_score"),
        dispatched=d.get("dispatched", 0),
        analyst_calls=d.get("analyst_calls", 0),
        backend_calls=d.get("backend_calls", 0),
        warnings=tuple(d.get("warnings", ())),
        error=d.get("error"),
    )


def render_report(results: Sequence[CaseResult], config_digest: str = "") -> str:
    doc = {
        "schema": SCHEMA,
        "config_digest": config_digest,
        "results": [case_to_dict(r) for r in results],
    }
    return canonical_json(doc)


def write_report(results: Sequence[CaseResult], dest: IO[bytes], config_digest: str = "") -> bytes:
    """Write the canonical JSON report to a binary sink and return the bytes written."""
    data = render_report(results, config_digest).encode("utf-8")
    dest.write(data)
    return data


def parse_report(data: str | bytes) -> tuple[str, list[CaseResult]]:
    """Inverse of :func:`write_report`; returns (config_digest, results)."""
    doc = json.loads(data)
    if doc.get("schema") != SCHEMA:
        raise InvalidValueError(f"unsupported report schema {doc.get('schema')!r}")
    return doc.get("config_digest", ""), [case_from_dict(d) for d in doc["results"]]
