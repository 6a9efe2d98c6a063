"""Stage orchestration: escalation gates, memory and per-case accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .agents import (
    ANALYSTS,
    AgentBackend,
    AgentReport,
    FindingKey,
    MemoryView,
    RuleBackend,
    agreement_score,
    counter_score,
    fingerprint,
    merge_findings,
    route,
)
from .agents.base import render_findings
from .config import Config
from .context import ContextBundle, build_bundle, empty_bundle, token_estimate
from .core import CaseResult, EvidenceVector, Finding, Region, SourceLocation, case_score_of
from .fusion import decide, final_action, fuse, interim_score
from .ingest import RepoSnapshot, extract_regions
from .triage import KeywordRiskScorer, RiskScorer, RuleSpec, load_rules, triage
from .verification import PlanUnavailable, VerificationOutcome, build_plan, execute

log = logging.getLogger(__name__)

# modeled cost: fixed seconds per stage plus a decoding rate per token
MODEL_STAGE_SECONDS = {"triage": 0.02, "context": 0.05, "analysis": 0.5, "verification": 0.0, "fusion": 0.001}
MODEL_SECONDS_PER_TOKEN = 0.0005
MODEL_SECONDS_PER_EXECUTION = 1.5


# --------------------------------------------------------------------------- #
# Memory
# --------------------------------------------------------------------------- #


def _safe_name(project: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", project) or "_default"


class MemoryStore:
    """Session memory (write-once agent reports) and per-project fact lists.

    Facts are tagged strings such as ``sanitizer:clean_path``. With a cache
    directory they persist as ``facts-<project>.json`` between runs.
    """

    def __init__(self, cache_dir: str | None = None, enabled: bool = True):
        self.enabled = enabled
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._session: dict[tuple[str, str], AgentReport] = {}
        self._facts: dict[str, list[str]] = {}
        self._lock = threading.Lock()

    def get(self, fp: str, agent_id: str) -> AgentReport | None:
        if not self.enabled:
            return None
        with self._lock:
            return self._session.get((fp, agent_id))

    def put(self, fp: str, agent_id: str, report: AgentReport) -> AgentReport:
        """Store unless present; returns whichever report is now stored."""
        if not self.enabled:
            return report
        with self._lock:
            return self._session.setdefault((fp, agent_id), report)

    @property
    def session_size(self) -> int:
        return len(self._session)

    def _facts_path(self, project: str) -> Path | None:
        return self.cache_dir / f"facts-{_safe_name(project)}.json" if self.cache_dir else None

    def _load(self, project: str) -> list[str]:
        if project not in self._facts:
            facts: list[str] = []
            path = self._facts_path(project)
            if path is not None and path.is_file():
                try:
                    facts = [str(f) for f in json.loads(path.read_text(encoding="utf-8"))]
                except (OSError, ValueError) as exc:
                    log.warning("ignoring unreadable fact file %s: %s", path, exc)
            self._facts[project] = facts
        return self._facts[project]

    def facts(self, project: str) -> tuple[str, ...]:
        if not self.enabled:
            return ()
        with self._lock:
            return tuple(self._load(project))

    def add_facts(self, project: str, facts: Sequence[str]) -> None:
        if not self.enabled or not facts:
            return
        with self._lock:
            known = self._load(project)
            new = [f for f in dict.fromkeys(facts) if f not in known]
            if not new:
                return
            known.extend(new)
            path = self._facts_path(project)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps(sorted(known), indent=1) + "\n", encoding="utf-8")
                tmp.replace(path)

    def view(self, project: str) -> MemoryView:
        return MemoryView(project, frozenset(self.facts(project)))


# --------------------------------------------------------------------------- #
# Backends
# --------------------------------------------------------------------------- #


@dataclass
class Backends:
    agents: AgentBackend
    scorer: RiskScorer | None
    rules: list[RuleSpec]
    planner: object | None = None
    calls: dict[str, int] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def count(self, agent_id: str) -> None:
        with self._lock:
            self.calls[agent_id] = self.calls.get(agent_id, 0) + 1


def make_backends(config: Config, client=None) -> Backends:
    rules = load_rules(config.rules_path)
    if config.backend == "rules":
        return Backends(RuleBackend(), KeywordRiskScorer(), rules)
    from .agents.llm import ChatClient, LLMBackend, LLMRiskScorer, LLMSettings, LLMVerificationPlanner

    if client is None:
        client = ChatClient(LLMSettings.from_env(config.llm_timeout_secs, config.llm_max_retries))
    return Backends(LLMBackend(client), LLMRiskScorer(client), rules, LLMVerificationPlanner(client))


# --------------------------------------------------------------------------- #
# Pipeline
# --------------------------------------------------------------------------- #


@dataclass
class _Case:
    """Mutable accumulator for one sample."""

    stage_path: list[str] = field(default_factory=list)
    stage_tokens: dict[str, int] = field(default_factory=dict)
    findings: list[Finding] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    dispatched: int = 0
    analyst_calls: int = 0
    backend_calls: int = 0
    executions: int = 0

    def enter(self, stage: str, tokens: int = 0) -> None:
        if stage not in self.stage_path:
            self.stage_path.append(stage)
            self.stage_tokens[stage] = 0
        self.stage_tokens[stage] += tokens

    @property
    def tokens(self) -> int:
        return sum(self.stage_tokens.values())


def rule_findings(
    region: Region,
    rules: Sequence[RuleSpec],
    score: float,
    action: str,
    evidence: EvidenceVector,
    strongest_only: bool = False,
) -> list[Finding]:
    """Findings straight from triage rule hits, one per (line, category)."""
    by_id = {r.rule_id: r for r in rules}
    hits = [h for h in region.signals.rule_hits if h.rule_id in by_id]
    if strongest_only and hits:
        top = max(by_id[h.rule_id].weight for h in hits)
        hits = [h for h in hits if by_id[h.rule_id].weight == top]
    seen, out = set(), []
    loc = region.location
    for h in hits:
        rule = by_id[h.rule_id]
        key = (h.line, rule.category)
        if key in seen:
            continue
        seen.add(key)
        out.append(
            Finding(
                issue_type=rule.category,
                location=SourceLocation(loc.file, h.line, h.line, loc.side),
                evidence_summary=f"rule {rule.rule_id}: {h.excerpt}",
                confidence=score,
                severity=rule.severity,
                remediation=rule.description or None,
                score=score,
                evidence=evidence,
                action=action,
                agents=(),
            )
        )
    return out


def _scope_for(region: Region, snapshot: RepoSnapshot) -> Region | None:
    """The enclosing function of a hunk, as a function region."""
    if region.kind != "hunk" or region.location.side != "new":
        return None
    rec = snapshot.function_at(region.location.file, region.location.line_start, region.location.line_end)
    if rec is None:
        return None
    return Region(
        id=f"{region.id}/scope",
        kind="function",
        location=rec.location,
        text=rec.body,
        function_name=rec.name,
    )


def _run_agent(
    agent_id: str,
    region: Region,
    bundle: ContextBundle,
    view: MemoryView,
    claims: Sequence[Finding],
    scope: Region | None,
    fp: str,
    backends: Backends,
    memory: MemoryStore,
    case: _Case,
) -> AgentReport:
    case.dispatched += 1
    if agent_id in ANALYSTS:
        case.analyst_calls += 1
    cache_key = fp if agent_id != "sceptic" else f"{fp}:{_claims_digest(claims)}"
    cached = memory.get(cache_key, agent_id)
    if cached is not None:
        # the work was already paid for in this session
        return replace(cached, tokens_used=0)
    report = backends.agents.run(agent_id, region, bundle, view, claims, scope)
    case.backend_calls += 1
    backends.count(agent_id)
    if report.unavailable:
        case.warnings.append(f"agent_unavailable:{agent_id}:{region.id}")
        return report
    return memory.put(cache_key, agent_id, report)


def _claims_digest(claims: Sequence[Finding]) -> str:
    return hashlib.sha256(render_findings(claims).encode("utf-8")).hexdigest()[:16] if claims else "-"


def _verify(
    finding: Finding,
    region: Region,
    scope: Region | None,
    bundle: ContextBundle,
    backends: Backends,
    config: Config,
    case: _Case,
) -> VerificationOutcome:
    code = scope.code() if scope is not None else region.code()
    prompt_tokens = token_estimate(
        f"{finding.issue_type} {finding.evidence_summary}\n{code}"
    ) if backends.planner is None else 0
    try:
        plan, tokens = build_plan(
            finding,
            scope or region,
            code,
            bundle,
            backends.planner,
            config.verify_timeout_secs,
            config.compiler,
        )
    except PlanUnavailable as exc:
        case.enter("verification", prompt_tokens)
        return VerificationOutcome.of("inconclusive", note=f"plan unavailable: {exc}")
    except Exception as exc:  # planner backend failure
        case.enter("verification", prompt_tokens)
        case.warnings.append(f"verification_plan_failed:{region.id}")
        return VerificationOutcome.of("inconclusive", note=str(exc))
    case.enter("verification", prompt_tokens + tokens)
    case.executions += 1
    try:
        return execute(plan)
    except OSError as exc:
        case.warnings.append(f"sandbox_unavailable:{region.id}")
        return VerificationOutcome.of("inconclusive", note=str(exc))


def _modeled_time(case: _Case) -> float:
    t = sum(MODEL_STAGE_SECONDS[s] for s in case.stage_path)
    return round(t + case.tokens * MODEL_SECONDS_PER_TOKEN + case.executions * MODEL_SECONDS_PER_EXECUTION, 6)


def _result(sample_id: str, case: _Case, config: Config, started: float, max_risk0: float, interim) -> CaseResult:
    findings = tuple(sorted(case.findings, key=lambda f: (-(f.score or 0.0), f.location.file, f.location.line_start, f.issue_type)))
    score = case_score_of(findings)
    verdict = "vulnerable" if any(f.accepted for f in findings) else "benign"
    omitted = not {"analysis", "verification"} <= set(case.stage_path)
    wall = _modeled_time(case) if config.modeled_timing else round(time.perf_counter() - started, 6)
    return CaseResult(
        sample_id=sample_id,
        verdict=verdict,
        case_score=score,
        findings=findings,
        stage_path=tuple(case.stage_path),
        tokens_used=case.tokens,
        wall_time=wall,
        early_exit=omitted,
        verified="verification" in case.stage_path,
        stage_tokens=dict(case.stage_tokens),
        max_risk0=max_risk0,
        interim_score=interim,
        dispatched=case.dispatched,
        analyst_calls=case.analyst_calls,
        backend_calls=case.backend_calls,
        warnings=tuple(case.warnings),
    )


def errored_result(sample_id: str, exc: BaseException) -> CaseResult:
    return CaseResult(
        sample_id=sample_id,
        verdict="benign",
        case_score=0.0,
        early_exit=True,
        error=f"{type(exc).__name__}: {exc}",
    )


def run_pipeline(
    sample,
    snapshot: RepoSnapshot,
    config: Config,
    backends: Backends | None = None,
    memory: MemoryStore | None = None,
    project: str | None = None,
) -> CaseResult:
    """Run one sample through the staged pipeline; hard errors yield an errored case."""
    backends = backends or make_backends(config)
    memory = memory or MemoryStore(config.cache_dir, enabled=not config.disabled("memory"))
    project = project if project is not None else getattr(sample, "project", "")
    try:
        return _pipeline(sample, snapshot, config, backends, memory, project)
    except Exception as exc:
        log.warning("sample %s failed: %s", getattr(sample, "id", "?"), exc)
        return errored_result(getattr(sample, "id", "?"), exc)


def _pipeline(sample, snapshot, config: Config, backends: Backends, memory: MemoryStore, project: str) -> CaseResult:
    started = time.perf_counter()
    thr = config.thresholds()
    w = config.fusion_weights()
    preset = config.preset
    case = _Case()

    regions = extract_regions(sample, snapshot)
    scorer = None if preset == "static" else backends.scorer
    tri = triage(regions, snapshot, backends.rules, scorer, config.triage_coefficients(), config.k)
    case.enter("triage", tri.tokens)
    case.warnings.extend(tri.warnings)
    max_r = tri.max_risk0
    risks = tri.risks

    if preset == "static":
        for region in tri.selected:
            s = region.signals.s_stat
            ev = EvidenceVector(risk0=risks[region.id], e_stat=s)
            case.findings.extend(rule_findings(region, backends.rules, s, final_action(s, thr), ev))
        return _result(sample.id, case, config, started, max_r, None)

    gated = preset != "sequential" and not config.disabled("scheduler")
    if gated and preset == "full" and max_r < thr.tau_low:
        for region in tri.selected:
            r = risks[region.id]
            ev = EvidenceVector(risk0=r, e_stat=region.signals.s_stat)
            case.findings.extend(rule_findings(region, backends.rules, r, "reject", ev))
        return _result(sample.id, case, config, started, max_r, None)

    use_context = preset != "single_agent" and not config.disabled("context")
    bundles: dict[str, ContextBundle] = {}
    for region in tri.selected:
        if use_context:
            bundles[region.id] = build_bundle(
                region, snapshot, config.relevance_coefficients(), config.context_budget
            )
        else:
            bundles[region.id] = empty_bundle(region.id, config.context_budget)
    if preset != "single_agent":
        case.enter("context", 0)

    def e_ctx(region: Region) -> float:
        return bundles[region.id].mean_relevance if use_context else 0.0

    lead = tri.selected[0]
    interim = None
    if preset in ("full", "sequential"):
        interim = interim_score(risks[lead.id], lead.signals.s_stat, e_ctx(lead), w)
        if gated and interim >= thr.tau_high:
            ev = EvidenceVector(risk0=risks[lead.id], e_stat=lead.signals.s_stat, e_ctx=e_ctx(lead))
            case.findings.extend(rule_findings(lead, backends.rules, interim, "accept_early", ev, strongest_only=True))
            case.enter("fusion", 0)
            return _result(sample.id, case, config, started, max_r, interim)

    case.enter("analysis", 0)
    view = memory.view(project)
    verify_on = config.verify_enabled and not config.disabled("verification") and preset in ("full", "sequential")
    if preset == "sequential" and verify_on:
        case.enter("verification", 0)

    for region in tri.selected:
        bundle = bundles[region.id]
        scope = _scope_for(region, snapshot)
        fp = f"{project}:{fingerprint(region, bundle)}"
        if preset in ("single_agent", "rag_only"):
            agents = ["security"]
        else:
            agents = route(region, rules=backends.rules)
            if config.disabled("sceptic"):
                agents = [a for a in agents if a != "sceptic"]

        reports: list[AgentReport] = []
        tokens_before = 0
        for agent_id in agents:
            if agent_id == "sceptic":
                continue
            rep = _run_agent(agent_id, region, bundle, view, (), scope, fp, backends, memory, case)
            reports.append(rep)
            tokens_before += rep.tokens_used
        if "sceptic" in agents:
            claims = [f for rep in reports for f in rep.findings]
            rep = _run_agent("sceptic", region, bundle, view, claims, scope, fp, backends, memory, case)
            reports.append(rep)
            tokens_before += rep.tokens_used
            memory.add_facts(project, rep.facts)
        case.enter("analysis", tokens_before)

        for finding, asserted_by in merge_findings(reports):
            key = FindingKey.of(finding)
            e_agt = agreement_score(reports, key)
            e_ctr = 0.0 if config.disabled("sceptic") else counter_score(reports, key)
            ev = EvidenceVector(
                risk0=risks[region.id],
                e_stat=region.signals.s_stat,
                e_ctx=e_ctx(region),
                e_agt=e_agt,
                e_ctr=e_ctr,
            )
            if preset in ("single_agent", "rag_only"):
                score = finding.confidence
                case.findings.append(
                    replace(finding, score=score, evidence=ev, action=final_action(score, thr), agents=asserted_by)
                )
                continue
            score = fuse(ev, w)
            action = decide(score, finding.severity, thr)
            if verify_on and (preset == "sequential" or action == "verify_then_decide"):
                outcome = _verify(finding, region, scope, bundle, backends, config, case)
                ev = replace(ev, e_dyn=outcome.e_dyn)
                score = fuse(ev, w)
                if outcome.note and outcome.status == "inconclusive":
                    case.warnings.append(f"verification_inconclusive:{key}")
            case.findings.append(
                replace(
                    finding,
                    confidence=score,
                    score=score,
                    evidence=ev,
                    action=final_action(score, thr),
                    agents=asserted_by,
                )
            )

    if preset in ("full", "sequential"):
        case.enter("fusion", 0)
    return _result(sample.id, case, config, started, max_r, interim)

