from __future__ import annotations

import json

import httpx
import pytest

from vulnaudit.agents.base import MemoryView
from vulnaudit.agents.llm import (
    ENV_BASE_URL,
    ENV_MODEL,
    ChatClient,
    ChatError,
    LLMBackend,
    LLMRiskScorer,
    LLMSettings,
    ReplyFormatError,
    ask_json,
    parse_json_reply,
)
from vulnaudit.context import empty_bundle
from vulnaudit.core import Region, SourceLocation

REGION = Region("r", "function", SourceLocation("a.c", 10, 14), "int f(char *s)\n{\n    strcpy(b, s);\n    return 0;\n}")


def _reply(content, usage=True):
    body = {"choices": [{"message": {"content": content}}]}
    if usage:
        body["usage"] = {"total_tokens": 42}
    return httpx.Response(200, json=body)


def _client(responses, seen=None):
    queue = list(responses)

    def handler(request):
        if seen is not None:
            seen.append(json.loads(request.content))
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    settings = LLMSettings("http://llm.test/v1", "m", api_key="k", max_retries=2)
    return ChatClient(settings, transport=httpx.MockTransport(handler), backoff=0.0)


def test_settings_from_env(monkeypatch):
    monkeypatch.delenv(ENV_BASE_URL, raising=False)
    with pytest.raises(ChatError):
        LLMSettings.from_env()
    monkeypatch.setenv(ENV_BASE_URL, "http://x/v1/")
    monkeypatch.setenv(ENV_MODEL, "coder")
    s = LLMSettings.from_env()
    assert (s.base_url, s.model) == ("http://x/v1", "coder")


@pytest.mark.parametrize(
    "text,expected",
    [
        ('{"a": 1}', {"a": 1}),
        ('Sure!\n```json\n{"a": 2}\n```\nbye', {"a": 2}),
        ('prefix {"a": 3} trailing', {"a": 3}),
    ],
)
def test_parse_json_reply(text, expected):
    assert parse_json_reply(text) == expected


@pytest.mark.parametrize("text", ["no json", "{broken", "```json\n[1]\n```"])
def test_parse_json_reply_rejects(text):
    with pytest.raises(ReplyFormatError):
        parse_json_reply(text)


def test_retries_server_errors_then_succeeds():
    seen = []
    client = _client([httpx.Response(503), httpx.ConnectError("down"), _reply('{"ok": true}')], seen)
    text, tokens = client.complete([{"role": "user", "content": "hi"}])
    assert text == '{"ok": true}' and tokens == 42 and client.calls == 3
    assert seen[0]["model"] == "m" and seen[0]["temperature"] == 0.0


def test_gives_up_after_retries_and_on_client_errors():
    with pytest.raises(ChatError):
        _client([httpx.Response(500)] * 3).complete([{"role": "user", "content": "x"}])
    with pytest.raises(ChatError):
        _client([httpx.Response(401, text="no")]).complete([{"role": "user", "content": "x"}])


def test_token_estimate_without_usage():
    client = _client([_reply("abcd", usage=False)])
    _, tokens = client.complete([{"role": "user", "content": "abcdefgh"}])
    assert tokens == 3


def test_ask_json_repairs_once():
    seen = []
    client = _client([_reply("not json"), _reply('{"risk": 0.4}')], seen)
    obj, tokens = ask_json(client, "rate")
    assert obj == {"risk": 0.4} and tokens == 84
    assert "could not be parsed" in seen[1]["messages"][-1]["content"]
    with pytest.raises(ReplyFormatError):
        ask_json(_client([_reply("nope"), _reply("still nope")]), "rate")


def test_backend_parses_findings_and_drops_bad_locations():
    reply = {
        "findings": [
            {"issue_type": "security/buffer-overflow", "line_start": 12, "confidence": 0.7, "severity": "high", "evidence": "strcpy"},
            {"issue_type": "security/x", "line_start": 99, "confidence": 0.9},
            {"issue_type": "security/y", "line_start": 11, "confidence": "high"},
        ],
        "confidence": 0.7,
    }
    rep = LLMBackend(_client([_reply(json.dumps(reply))])).run("security", REGION, empty_bundle("r", 10), MemoryView())
    assert [(f.issue_type, f.location.line_start) for f in rep.findings] == [("security/buffer-overflow", 12)]
    assert rep.tokens_used == 42 and not rep.unavailable


def test_backend_sceptic_reply():
    reply = {
        "counter_claims": [{"issue_type": "security/buffer-overflow", "line_start": 12, "strength": 0.6, "rebuttal": "guarded"}],
        "facts": ["sanitizer:clean", "junk"],
        "confidence": 0.6,
    }
    rep = LLMBackend(_client([_reply(json.dumps(reply))])).run("sceptic", REGION, empty_bundle("r", 10), MemoryView())
    assert rep.counter_claims[0].strength == 0.6 and rep.facts == ("sanitizer:clean",)


def test_backend_failure_is_an_unavailable_report():
    rep = LLMBackend(_client([httpx.Response(500)] * 3)).run("logic", REGION, empty_bundle("r", 10), MemoryView())
    assert rep.unavailable and rep.confidence == 0.0 and rep.findings == ()


def test_risk_scorer():
    assert LLMRiskScorer(_client([_reply('{"risk": 1.7}')])).score(REGION) == (1.0, 42)
    with pytest.raises(ReplyFormatError):
        LLMRiskScorer(_client([_reply('{"level": "high"}')])).score(REGION)
