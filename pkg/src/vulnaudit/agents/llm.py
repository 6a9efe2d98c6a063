"""Adapter for OpenAI-compatible chat-completion endpoints.

Credentials come from the environment only:
VULNAUDIT_LLM_BASE_URL, VULNAUDIT_LLM_MODEL and VULNAUDIT_LLM_API_KEY.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from typing import Any, Sequence

import httpx

from ..context import ContextBundle, token_estimate
from ..core import SEVERITIES, Finding, Region, SourceLocation, clamp_unit
from .base import AgentReport, CounterClaim, FindingKey, MemoryView, numbered_listing, prompt_template, render_agent_prompt

log = logging.getLogger(__name__)

ENV_BASE_URL = "VULNAUDIT_LLM_BASE_URL"
ENV_MODEL = "VULNAUDIT_LLM_MODEL"
ENV_API_KEY = "VULNAUDIT_LLM_API_KEY"

SYSTEM_PROMPT = "You are a careful code auditor. Answer with JSON only."


class ChatError(RuntimeError):
    """The endpoint failed after all retries."""


class ReplyFormatError(ValueError):
    """A reply could not be read as the mandated JSON object."""


@dataclass(frozen=True)
class LLMSettings:
    base_url: str
    model: str
    api_key: str = ""
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0

    @classmethod
    def from_env(cls, timeout: float = 60.0, max_retries: int = 2) -> LLMSettings:
        base = os.environ.get(ENV_BASE_URL, "")
        model = os.environ.get(ENV_MODEL, "")
        if not base or not model:
            raise ChatError(f"set {ENV_BASE_URL} and {ENV_MODEL} to use the llm backend")
        return cls(base.rstrip("/"), model, os.environ.get(ENV_API_KEY, ""), timeout, max_retries)


class ChatClient:
    def __init__(self, settings: LLMSettings, transport: httpx.BaseTransport | None = None, backoff: float = 0.5):
        self.settings = settings
        self.backoff = backoff
        headers = {"Content-Type": "application/json"}
        if settings.api_key:
            headers["Authorization"] = f"Bearer {settings.api_key}"
        self._http = httpx.Client(
            base_url=settings.base_url, headers=headers, timeout=settings.timeout, transport=transport
        )
        self.calls = 0

    def close(self) -> None:
        self._http.close()

    def complete(self, messages: list[dict[str, str]]) -> tuple[str, int]:
        """Return (reply text, tokens billed). Retries transport errors, 429 and 5xx."""
        body = {"model": self.settings.model, "messages": messages, "temperature": self.settings.temperature}
        last: Exception | None = None
        for attempt in range(self.settings.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self.calls += 1
            try:
                resp = self._http.post("/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = ChatError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ChatError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ChatError(f"unexpected response shape: {exc}") from exc
            usage = data.get("usage") or {}
            tokens = usage.get("total_tokens")
            if tokens is None:
                tokens = sum(token_estimate(m["content"]) for m in messages) + token_estimate(text)
            return text, int(tokens)
        raise ChatError(f"endpoint failed after {self.settings.max_retries + 1} attempts: {last}")


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def parse_json_reply(text: str) -> dict[str, Any]:
    """First JSON object in a reply, tolerating code fences and surrounding prose."""
    m = _FENCE_RE.search(text)
    candidate = m.group(1) if m else text
    start = candidate.find("{")
    if start < 0:
        raise ReplyFormatError("no JSON object in reply")
    try:
        obj, _ = json.JSONDecoder().raw_decode(candidate[start:])
    except json.JSONDecodeError as exc:
        raise ReplyFormatError(f"invalid JSON: {exc.msg} at column {exc.colno}") from exc
    if not isinstance(obj, dict):
        raise ReplyFormatError("reply is not a JSON object")
    return obj


def ask_json(client: ChatClient, prompt: str) -> tuple[dict[str, Any], int]:
    """One request plus a single repair round trip quoting the parse error."""
    messages = [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": prompt}]
    text, tokens = client.complete(messages)
    try:
        return parse_json_reply(text), tokens
    except ReplyFormatError as exc:
        messages += [
            {"role": "assistant", "content": text},
            {"role": "user", "content": f"Your reply could not be parsed ({exc}). Send only the JSON object."},
        ]
        text, more = client.complete(messages)
        try:
            return parse_json_reply(text), tokens + more
        except ReplyFormatError as exc2:
            raise ReplyFormatError(str(exc2)) from exc2


def _int(value: Any, default: int) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        return default


def findings_from_reply(obj: dict[str, Any], region: Region) -> list[Finding]:
    loc = region.location
    out = []
    for item in obj.get("findings") or []:
        if not isinstance(item, dict) or not item.get("issue_type"):
            continue
        start = _int(item.get("line_start"), loc.line_start)
        end = max(start, _int(item.get("line_end"), start))
        if not (loc.line_start <= start <= loc.line_end):
            continue  # hallucinated location
        severity = item.get("severity") if item.get("severity") in SEVERITIES else "medium"
        try:
            confidence = clamp_unit(float(item.get("confidence", 0.5)))
        except (TypeError, ValueError):
            continue
        out.append(
            Finding(
                issue_type=str(item["issue_type"]),
                location=SourceLocation(loc.file, start, min(end, loc.line_end), loc.side),
                evidence_summary=str(item.get("evidence", ""))[:500],
                confidence=confidence,
                severity=severity,
                remediation=item.get("remediation"),
            )
        )
    return out


def claims_from_reply(obj: dict[str, Any], region: Region) -> list[CounterClaim]:
    out = []
    for item in obj.get("counter_claims") or []:
        if not isinstance(item, dict) or not item.get("issue_type"):
            continue
        start = _int(item.get("line_start"), 0)
        if start < 1:
            continue
        end = max(start, _int(item.get("line_end"), start))
        try:
            strength = clamp_unit(float(item.get("strength", 0.0)))
        except (TypeError, ValueError):
            continue
        key = FindingKey(str(item["issue_type"]), region.location.file, start, end)
        out.append(CounterClaim(key, str(item.get("rebuttal", ""))[:500], strength))
    return out


class LLMBackend:
    """Agents answered by a chat model; any failure yields an unavailable report."""

    def __init__(self, client: ChatClient):
        self.client = client

    def run(
        self,
        agent_id: str,
        region: Region,
        bundle: ContextBundle,
        memory: MemoryView,
        claims: Sequence[Finding] = (),
        scope: Region | None = None,
    ) -> AgentReport:
        prompt = render_agent_prompt(agent_id, region, bundle, memory, claims)
        try:
            obj, tokens = ask_json(self.client, prompt)
        except (ChatError, ReplyFormatError) as exc:
            log.warning("agent %s unavailable for %s: %s", agent_id, region.id, exc)
            return AgentReport.unavailable_report(agent_id, note=str(exc))
        try:
            confidence = clamp_unit(float(obj.get("confidence", 0.0)))
        except (TypeError, ValueError):
            confidence = 0.0
        if agent_id == "sceptic":
            facts = tuple(sorted(str(f) for f in obj.get("facts") or [] if isinstance(f, str) and ":" in f))
            return AgentReport(
                "sceptic",
                counter_claims=tuple(claims_from_reply(obj, region)),
                confidence=confidence,
                tokens_used=tokens,
                facts=facts,
            )
        return AgentReport(
            agent_id, findings=tuple(findings_from_reply(obj, region)), confidence=confidence, tokens_used=tokens
        )


class LLMRiskScorer:
    """Triage language-model signal from a one-shot risk rating."""

    def __init__(self, client: ChatClient):
        self.client = client

    def score(self, region: Region) -> tuple[float, int]:
        prompt = prompt_template("risk").substitute(listing=numbered_listing(region))
        obj, tokens = ask_json(self.client, prompt)
        try:
            return clamp_unit(float(obj["risk"])), tokens
        except (KeyError, TypeError, ValueError) as exc:
            raise ReplyFormatError(f"risk reply lacks a numeric 'risk': {exc}") from exc


class LLMVerificationPlanner:
    """Asks the model for a self-contained reproduction artefact."""

    def __init__(self, client: ChatClient):
        self.client = client

    def propose(self, finding: Finding, region: Region, timeout: float) -> tuple[dict[str, Any], int]:
        loc = finding.location
        prompt = prompt_template("verification").substitute(
            issue_type=finding.issue_type,
            file=loc.file,
            line_start=loc.line_start,
            line_end=loc.line_end,
            evidence=finding.evidence_summary,
            listing=numbered_listing(region),
            timeout=int(timeout),
        )
        return ask_json(self.client, prompt)
