"""Analysis agents: shared interface plus rule-based and LLM backends."""

from .base import (
    ANALYSTS,
    AgentBackend,
    AgentReport,
    AgentStateError,
    CounterClaim,
    FindingKey,
    MemoryView,
    agreement_score,
    counter_score,
    fingerprint,
    merge_findings,
    route,
)
from .rules import RuleBackend

__all__ = [
    "ANALYSTS",
    "AgentBackend",
    "AgentReport",
    "AgentStateError",
    "CounterClaim",
    "FindingKey",
    "MemoryView",
    "RuleBackend",
    "agreement_score",
    "counter_score",
    "fingerprint",
    "merge_findings",
    "route",
]
