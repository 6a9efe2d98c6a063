"""Deterministic rule-based agent backends.

They are lexical approximations of what each role looks for: a forward taint
pass from sources and parameters to sinks, bounds-check adjacency, lock and
lifetime bookkeeping, and reachability/constness rebuttals. Every decision is
a pure function of the inputs, so end-to-end runs are reproducible.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .. import clike
from ..context import ContextBundle, token_estimate
from ..core import Finding, Region
from .base import AgentReport, CounterClaim, FindingKey, MemoryView, finding_at, render_agent_prompt

CHECK_WINDOW = 4  # lines above a copy that may hold its bounds check

CONF_GETS = 0.95
CONF_SOURCE = 0.9
CONF_PARAM = 0.6
CONF_PARAM_FED = 0.85
CONF_UNCHECKED_COPY = 0.8
CONF_UNCHECKED_INDEX = 0.75
CONF_RETURN_UNDER_LOCK = 0.6
CONF_LOCK_IMBALANCE = 0.75
CONF_USE_AFTER_FREE = 0.8
CONF_UNINIT = 0.6
STRENGTH_UNREACHABLE = 0.8
STRENGTH_CONSTANT = 0.8
STRENGTH_CALLERS_CONSTANT = 0.6
STRENGTH_SANITIZED = 0.6

_ASSIGN_RE = re.compile(r"(?<![=!<>])\b([A-Za-z_]\w*)\s*(?:\[[^\]\n]*\])?\s*(?:[-+*/|&^%]|<<|>>)?=(?!=)")
_INDEX_WRITE_RE = re.compile(r"\b([A-Za-z_]\w*)\s*\[\s*([A-Za-z_]\w*)\s*\]\s*=(?!=)")
_ARRAY_DECL_RE = re.compile(r"\b([A-Za-z_]\w*)[\s*]+([A-Za-z_]\w*)\s*\[\s*(\d+)\s*\]\s*[;=,]")
_NOT_TYPES = {"return", "case", "goto", "else", "sizeof"}
_COMPARE_RE = re.compile(r"(<=|>=|<|>)")
_SCALAR_DECL_RE = re.compile(
    r"^\s*(?:const\s+|unsigned\s+|signed\s+|static\s+)*"
    r"(?:int|long|short|size_t|ssize_t|unsigned|char\s*\*|void\s*\*|int\d+_t|uint\d+_t|double|float)"
    r"\s+(\*?\s*[A-Za-z_]\w*)\s*;"
)
_LOCK_RE = re.compile(r"(?:^|_)lock$")
_UNLOCK_RE = re.compile(r"unlock$")


@lru_cache(maxsize=1)
def tables() -> dict:
    root = resources.files("vulnaudit.data")
    data = json.loads(root.joinpath("sources_sinks.json").read_text(encoding="utf-8"))
    data.update(json.loads(root.joinpath("dead_branches.json").read_text(encoding="utf-8")))
    return data


# --------------------------------------------------------------------------- #
# Shared lexical analysis
# --------------------------------------------------------------------------- #


@dataclass
class Unit:
    """Code under analysis with absolute line bookkeeping."""

    code: str
    first_line: int
    masked: str = field(init=False)
    calls: list[clike.Call] = field(init=False)

    def __post_init__(self) -> None:
        self.masked = clike.mask_code(self.code)
        self.calls = clike.find_calls(self.code)

    @classmethod
    def of(cls, region: Region) -> Unit:
        return cls(region.code(), region.location.line_start)

    def abs_line(self, offset: int) -> int:
        return clike.line_of(self.code, offset) + self.first_line - 1

    def call_line(self, call: clike.Call) -> int:
        return call.line + self.first_line - 1

    def masked_line(self, absolute: int) -> str:
        rel = absolute - self.first_line
        mlines = self.masked.split("\n")
        return mlines[rel] if 0 <= rel < len(mlines) else ""

    def params(self) -> list[tuple[str, str]]:
        """(type text, name) for the first function header in the unit."""
        spans = clike.scan_functions(self.code)
        if not spans:
            return []
        header = self.code[spans[0].start : spans[0].body_open]
        mheader = self.masked[spans[0].start : spans[0].body_open]
        open_idx = mheader.find("(")
        close = clike.match_bracket(mheader, open_idx) if open_idx >= 0 else -1
        if close < 0:
            return []
        out = []
        for param in clike.split_args(header[open_idx + 1 : close]):
            idents = [t for t in clike.IDENT_RE.findall(param) if t not in clike.C_KEYWORDS or t == "char"]
            if not idents or param.strip() in ("void", "..."):
                continue
            name = idents[-1]
            out.append((param[: param.rfind(name)].strip(), name))
        return out

    def body_offset(self) -> int:
        spans = clike.scan_functions(self.code)
        return spans[0].body_open + 1 if spans else 0


def idents_of(expr: str) -> set[str]:
    expr = re.sub(r"\bsizeof\s*\([^)]*\)", " ", expr)
    return clike.identifiers(expr) - clike.C_KEYWORDS


Origin = tuple[str, str]  # ("source", fn) or ("param", name)


def _stronger(a: Origin | None, b: Origin) -> Origin:
    if a is None or (a[0] == "param" and b[0] == "source"):
        return b
    return a


def taint(unit: Unit, params: Sequence[str] = ()) -> dict[str, Origin]:
    """Forward, flow-insensitive-within-statement taint over the unit's body."""
    t = tables()
    sources = t["sources"]
    propagate = set(t["copy_calls"]) | set(t["bounded_calls"])
    tainted: dict[str, Origin] = {p: ("param", p) for p in params}
    start = unit.body_offset()

    events: list[tuple[int, str, object]] = []
    for call in unit.calls:
        if call.start >= start:
            events.append((call.start, "call", call))
    for m in _ASSIGN_RE.finditer(unit.masked, start):
        events.append((m.start(), "assign", m))
    events.sort(key=lambda e: (e[0], e[1]))

    for pos, kind, item in events:
        if kind == "call":
            call = item
            spec = sources.get(call.name)
            if spec:
                outs = list(spec.get("out", []))
                if "out_from" in spec:
                    outs += list(range(spec["out_from"], len(call.args)))
                for idx in outs:
                    if idx < len(call.args):
                        var = clike.base_identifier(call.args[idx])
                        if var:
                            tainted[var] = _stronger(tainted.get(var), ("source", call.name))
            elif call.name in propagate and call.args:
                dst = clike.base_identifier(call.args[0])
                origin = _expr_origin(" ".join(call.args[1:]), tainted)
                if dst and origin:
                    tainted[dst] = _stronger(tainted.get(dst), origin)
        else:
            m = item
            lhs = m.group(1)
            semi = unit.masked.find(";", m.end())
            rhs = unit.code[m.end() : semi if semi >= 0 else len(unit.code)]
            origin = _expr_origin(rhs, tainted)
            returns = [c.name for c in clike.find_calls(rhs) if sources.get(c.name, {}).get("returns")]
            if returns:
                origin = ("source", returns[0])
            if origin:
                tainted[lhs] = _stronger(tainted.get(lhs), origin)
    return tainted


def _expr_origin(expr: str, tainted: dict[str, Origin]) -> Origin | None:
    best = None
    for name in idents_of(expr):
        if name in tainted:
            best = _stronger(best, tainted[name])
    return best


def sink_args(call: clike.Call) -> list[str]:
    spec = tables()["sinks"].get(call.name)
    if not spec:
        return []
    idx = list(spec.get("args", []))
    if "args_from" in spec:
        idx += list(range(spec["args_from"], len(call.args)))
    return [call.args[i] for i in idx if i < len(call.args)]


def array_sizes(unit: Unit) -> dict[str, int]:
    """Fixed sizes of locally declared arrays; the first declaration of a name wins."""
    sizes: dict[str, int] = {}
    for m in _ARRAY_DECL_RE.finditer(unit.masked):
        if m.group(1) not in _NOT_TYPES:
            sizes.setdefault(m.group(2), int(m.group(3)))
    return sizes


def has_bounds_check(unit: Unit, line: int, names: set[str], window: int = CHECK_WINDOW) -> bool:
    """A comparison mentioning one of ``names`` within ``window`` lines above ``line``."""
    if not names:
        return False
    for ln in range(max(unit.first_line, line - window), line + 1):
        text = unit.masked_line(ln)
        if not re.search(r"\b(if|while|for)\b|\?", text):
            continue
        if _COMPARE_RE.search(text.replace("->", "  ")) and (idents_of(text) & names):
            return True
    return False


def within(region: Region, finding: Finding) -> bool:
    return region.location.contains_line(finding.location.line_start)


# --------------------------------------------------------------------------- #
# Analysts
# --------------------------------------------------------------------------- #


def security_findings(unit: Unit, region: Region, bundle: ContextBundle, function_name: str | None) -> list[Finding]:
    sinks = tables()["sinks"]
    params = [name for _, name in unit.params()]
    tainted = taint(unit, params)
    fed = _params_fed_by_callers(bundle, function_name, params)
    out: list[Finding] = []
    for call in unit.calls:
        spec = sinks.get(call.name)
        line = unit.call_line(call)
        if call.name in ("scanf", "fscanf") and _unbounded_scan(call):
            out.append(
                finding_at(
                    "security/unbounded-input",
                    region,
                    line,
                    f"{call.name} reads a string with no field width",
                    CONF_SOURCE,
                    "high",
                    "Give every %s conversion a field width below the buffer size.",
                )
            )
            continue
        if not spec:
            continue
        if spec.get("always"):
            out.append(
                finding_at(
                    spec["issue_type"],
                    region,
                    line,
                    f"{call.name}() reads input with no length limit",
                    CONF_GETS,
                    spec["severity"],
                    spec["remediation"],
                )
            )
            continue
        args = sink_args(call)
        if "format_arg" in spec:
            fi = spec["format_arg"]
            if fi >= len(call.args) or clike.is_constant_literal(call.args[fi]):
                continue
            args = [call.args[fi]]
        if spec.get("multiply_only"):
            args = [a for a in args if "*" in clike.mask_code(a)]
        args = [a for a in args if not clike.is_constant_literal(a)]
        origin = None
        for a in args:
            o = _expr_origin(a, tainted)
            if o:
                origin = _stronger(origin, o)
        if origin is None:
            continue
        if origin[0] == "source":
            conf, why = CONF_SOURCE, f"data read by {origin[1]}()"
        elif origin[1] in fed:
            conf, why = CONF_PARAM_FED, f"parameter '{origin[1]}', which a caller fills from {fed[origin[1]]}()"
        else:
            conf, why = CONF_PARAM, f"parameter '{origin[1]}'"
        out.append(
            finding_at(
                spec["issue_type"],
                region,
                line,
                f"{why} reaches {call.name}() unchecked",
                conf,
                spec["severity"],
                spec["remediation"],
            )
        )

    for m in _INDEX_WRITE_RE.finditer(unit.masked, unit.body_offset()):
        idx = m.group(2)
        line = unit.abs_line(m.start())
        origin = tainted.get(idx)
        if origin is None or has_bounds_check(unit, line, {idx}):
            continue
        conf = CONF_SOURCE if origin[0] == "source" else (CONF_PARAM_FED if idx in fed else CONF_PARAM)
        out.append(
            finding_at(
                "security/out-of-bounds-write",
                region,
                line,
                f"index '{idx}' from {'input' if origin[0] == 'source' else 'a parameter'} is not range checked",
                conf,
                "high",
                "Check the index against the array length before the store.",
            )
        )
    return out


def _unbounded_scan(call: clike.Call) -> bool:
    fmt_idx = 0 if call.name == "scanf" else 1
    if fmt_idx >= len(call.args):
        return False
    fmt = call.args[fmt_idx]
    return clike.is_constant_literal(fmt) and re.search(r"%s", fmt) is not None


def _params_fed_by_callers(bundle: ContextBundle, function_name: str | None, params: list[str]) -> dict[str, str]:
    """Parameters that some caller in the bundle fills from an input source."""
    fed: dict[str, str] = {}
    if not function_name or not params:
        return fed
    for item in bundle.of_kind("caller"):
        unit = Unit(item.text, 1)
        caller_taint = taint(unit)
        for call in unit.calls:
            if call.name != function_name:
                continue
            for idx, arg in enumerate(call.args[: len(params)]):
                o = _expr_origin(arg, caller_taint)
                if o and o[0] == "source":
                    fed.setdefault(params[idx], o[1])
    return fed


def semantic_findings(unit: Unit, region: Region) -> list[Finding]:
    t = tables()
    copies = set(t["copy_calls"])
    out: list[Finding] = []
    for call in unit.calls:
        line = unit.call_line(call)
        if call.name in ("scanf", "fscanf") and _unbounded_scan(call):
            out.append(
                finding_at(
                    "security/unbounded-input",
                    region,
                    line,
                    f"{call.name} %s conversion has no width to bound the destination",
                    CONF_UNCHECKED_COPY,
                    "high",
                    "Add a field width no larger than the destination size minus one.",
                )
            )
            continue
        if call.name not in copies:
            continue
        if call.name == "gets":
            out.append(
                finding_at(
                    "security/unbounded-input",
                    region,
                    line,
                    "gets() cannot be bounded by any check",
                    CONF_UNCHECKED_COPY,
                    "high",
                    "Use fgets with the destination size.",
                )
            )
            continue
        args = sink_args(call)
        live = [a for a in args if not clike.is_constant_literal(a)]
        if not live:
            continue
        names = set().union(*(idents_of(a) for a in live))
        if call.args:
            names |= idents_of(call.args[0])
        if has_bounds_check(unit, line, names):
            continue
        out.append(
            finding_at(
                "security/buffer-overflow",
                region,
                line,
                f"{call.name}() into a buffer with no preceding size check",
                CONF_UNCHECKED_COPY,
                "high",
                "Compare the source length with the destination capacity first.",
            )
        )

    sizes = array_sizes(unit)
    for m in _INDEX_WRITE_RE.finditer(unit.masked, unit.body_offset()):
        arr, idx = m.group(1), m.group(2)
        line = unit.abs_line(m.start())
        if has_bounds_check(unit, line, {idx}) and not _off_by_one(unit, line, idx, sizes.get(arr)):
            continue
        if arr not in sizes:
            continue
        out.append(
            finding_at(
                "security/out-of-bounds-write",
                region,
                line,
                f"store to {arr}[{idx}] without a range check on '{idx}'",
                CONF_UNCHECKED_INDEX,
                "high",
                "Check the index against the array length before the store.",
            )
        )

    for line in _returns_under_lock(unit):
        out.append(
            finding_at(
                "logic/lock-imbalance",
                region,
                line,
                "return while a lock is still held",
                CONF_RETURN_UNDER_LOCK,
                "medium",
                "Release the lock on every exit path.",
            )
        )
    return out


def _off_by_one(unit: Unit, line: int, idx: str, size: int | None) -> bool:
    if size is None:
        return False
    for ln in range(max(unit.first_line, line - CHECK_WINDOW), line + 1):
        if re.search(rf"\b{re.escape(idx)}\s*<=\s*{size}\b", unit.masked_line(ln)):
            return True
    return False


def _lock_events(unit: Unit) -> list[tuple[int, str, str]]:
    events = []
    for call in unit.calls:
        low = call.name.lower()
        target = clike.base_identifier(call.args[0]) if call.args and call.args[0] else ""
        if _UNLOCK_RE.search(low):
            events.append((call.start, "unlock", target or ""))
        elif _LOCK_RE.search(low):
            events.append((call.start, "lock", target or ""))
    for m in re.finditer(r"\breturn\b", unit.masked):
        events.append((m.start(), "return", ""))
    events.sort()
    return events


def _returns_under_lock(unit: Unit) -> list[int]:
    held: dict[str, int] = {}
    lines = []
    for pos, kind, target in _lock_events(unit):
        if kind == "lock":
            held[target] = held.get(target, 0) + 1
        elif kind == "unlock":
            held[target] = max(0, held.get(target, 0) - 1)
        elif any(held.values()):
            lines.append(unit.abs_line(pos))
    return lines


def logic_findings(unit: Unit, region: Region) -> list[Finding]:
    out: list[Finding] = []
    held: dict[str, tuple[int, int]] = {}
    for pos, kind, target in _lock_events(unit):
        if kind == "lock":
            count, first = held.get(target, (0, pos))
            held[target] = (count + 1, first if count else pos)
        elif kind == "unlock":
            count, first = held.get(target, (0, pos))
            held[target] = (max(0, count - 1), first)
        elif any(c for c, _ in held.values()):
            out.append(
                finding_at(
                    "logic/lock-imbalance",
                    region,
                    unit.abs_line(pos),
                    "function returns with a lock held",
                    CONF_LOCK_IMBALANCE,
                    "medium",
                    "Release the lock on every exit path.",
                )
            )
    if not out:
        for target, (count, first) in sorted(held.items()):
            if count > 0:
                out.append(
                    finding_at(
                        "logic/lock-imbalance",
                        region,
                        unit.abs_line(first),
                        f"lock on '{target}' is never released",
                        CONF_LOCK_IMBALANCE,
                        "medium",
                        "Pair every lock with an unlock.",
                    )
                )

    out.extend(_use_after_free(unit, region))
    out.extend(_use_before_init(unit, region))
    return out


def _use_after_free(unit: Unit, region: Region) -> list[Finding]:
    out = []
    for call in unit.calls:
        if call.name != "free" or not call.args:
            continue
        var = clike.base_identifier(call.args[0])
        if not var:
            continue
        for m in re.finditer(rf"\b{re.escape(var)}\b", unit.masked[call.end :]):
            pos = call.end + m.start()
            if _left_block_after_exit(unit.masked[call.end : pos]):
                break
            after = unit.masked[pos + len(var) : pos + len(var) + 4]
            if re.match(r"\s*=(?!=)", after):
                break  # reassigned before any use
            out.append(
                finding_at(
                    "logic/use-after-free",
                    region,
                    unit.abs_line(pos),
                    f"'{var}' is used after free()",
                    CONF_USE_AFTER_FREE,
                    "high",
                    "Set the pointer to NULL after freeing and do not reuse it.",
                )
            )
            break
    return out


def _left_block_after_exit(between: str) -> bool:
    """True when the text leaves the current block after an exit statement."""
    depth, exited = 0, False
    for m in re.finditer(r"[{}]|\b(return|goto|break|continue)\b", between):
        tok = m.group(0)
        if tok == "{":
            depth += 1
        elif tok == "}":
            depth -= 1
            if depth < 0 and exited:
                return True
        elif depth <= 0:
            exited = True
    return False


def _use_before_init(unit: Unit, region: Region) -> list[Finding]:
    out = []
    mlines = unit.masked.split("\n")
    for rel, text in enumerate(mlines):
        m = _SCALAR_DECL_RE.match(text)
        if not m:
            continue
        var = m.group(1).lstrip("*").strip()
        rest = "\n".join(mlines[rel + 1 :])
        use = re.search(rf"(&\s*)?\b{re.escape(var)}\b(\s*(?:[-+*/|&^%]|<<|>>)?=(?!=))?", rest)
        if use is None or use.group(1) or (use.group(2) and "=" == use.group(2).strip()):
            continue
        line = unit.first_line + rel + 1 + rest.count("\n", 0, use.start())
        out.append(
            finding_at(
                "logic/uninitialized-use",
                region,
                line,
                f"'{var}' is read before it is assigned",
                CONF_UNINIT,
                "medium",
                "Initialise the variable at its declaration.",
            )
        )
    return out


# --------------------------------------------------------------------------- #
# Sceptic
# --------------------------------------------------------------------------- #


def discover_sanitizers(bundle: ContextBundle, unit: Unit) -> set[str]:
    """Functions that behave like sanitizers, by name or by a length-guarding body."""
    pattern = re.compile(tables()["sanitizer_name_pattern"])
    found = {c.name for c in unit.calls if pattern.search(c.name)}
    for item in bundle.of_kind("callee", "sibling_code"):
        if not item.name:
            continue
        if pattern.search(item.name) or _guards_length(item.text):
            found.add(item.name)
    return found


def _guards_length(body: str) -> bool:
    masked = clike.mask_code(body, keep_strings=True)
    compares = re.search(r"strlen\s*\([^;]*\)\s*(>=|>)|(<=|<)\s*strlen\s*\(", masked)
    terminates = re.search(r"\]\s*=\s*'\\0'|\]\s*=\s*0\s*;", masked)
    return bool(compares and terminates)


def sceptic_claims(
    unit: Unit,
    region: Region,
    bundle: ContextBundle,
    claims: Sequence[Finding],
    memory: MemoryView,
    function_name: str | None,
) -> tuple[list[CounterClaim], list[str]]:
    t = tables()
    dead = {ln + unit.first_line - 1 for ln in clike.dead_lines(unit.code, t["constant_false_conditions"], t["terminators"])}
    discovered = discover_sanitizers(bundle, unit)
    sanitizers = discovered | memory.sanitizers()
    facts = sorted(f"sanitizer:{name}" for name in discovered)
    params = [name for _, name in unit.params()]
    source_taint = {k: v for k, v in taint(unit, params).items() if v[0] == "source"}
    literal_params = _params_literal_at_every_call(bundle, function_name, params)

    out: list[CounterClaim] = []
    seen: list[FindingKey] = []
    for f in claims:
        key = FindingKey.of(f)
        if any(k == key for k in seen):
            continue
        seen.append(key)
        line = f.location.line_start
        if any(ln in dead for ln in range(line, f.location.line_end + 1)):
            out.append(CounterClaim(key, "the flagged line is unreachable", STRENGTH_UNREACHABLE))
            continue
        calls = [
            c
            for c in unit.calls
            if unit.call_line(c) == line and tables()["sinks"].get(c.name, {}).get("issue_type") == f.issue_type
        ]
        args = [a for c in calls for a in sink_args(c)]
        if calls and args and all(clike.is_constant_literal(a) for a in args):
            out.append(CounterClaim(key, "every sink argument is a compile-time constant", STRENGTH_CONSTANT))
            continue
        names = set().union(*(idents_of(a) for a in args)) if args else set()
        if names and not (names & set(source_taint)):
            from_params = names & set(params)
            if from_params and from_params <= literal_params:
                out.append(
                    CounterClaim(key, "every caller passes a constant for the flagged argument", STRENGTH_CALLERS_CONSTANT)
                )
                continue
        used = _sanitized_before(unit, line, names, sanitizers)
        if used:
            out.append(CounterClaim(key, f"the argument passes through sanitizer {used}()", STRENGTH_SANITIZED))
    return out, facts


def _params_literal_at_every_call(bundle: ContextBundle, function_name: str | None, params: list[str]) -> set[str]:
    if not function_name or not params:
        return set()
    literal = {p: True for p in params}
    sites = 0
    for item in bundle.of_kind("caller"):
        for call in clike.find_calls(item.text):
            if call.name != function_name:
                continue
            sites += 1
            for idx, p in enumerate(params):
                if idx >= len(call.args) or not clike.is_constant_literal(call.args[idx]):
                    literal[p] = False
    return {p for p, ok in literal.items() if ok} if sites else set()


def _sanitized_before(unit: Unit, line: int, names: set[str], sanitizers: set[str]) -> str | None:
    if not names or not sanitizers:
        return None
    for call in unit.calls:
        if call.name in sanitizers and unit.call_line(call) <= line:
            touched = set().union(*(idents_of(a) for a in call.args)) if call.args else set()
            if touched & names:
                return call.name
    for m in _ASSIGN_RE.finditer(unit.masked):
        if m.group(1) in names and unit.abs_line(m.start()) <= line:
            semi = unit.masked.find(";", m.end())
            rhs_calls = clike.find_calls(unit.code[m.end() : semi if semi >= 0 else len(unit.code)])
            for c in rhs_calls:
                if c.name in sanitizers:
                    return c.name
    return None


# --------------------------------------------------------------------------- #
# Backend
# --------------------------------------------------------------------------- #


class RuleBackend:
    """Deterministic agents; token usage is the size of the prompt an LLM would see."""

    def run(
        self,
        agent_id: str,
        region: Region,
        bundle: ContextBundle,
        memory: MemoryView,
        claims: Sequence[Finding] = (),
        scope: Region | None = None,
    ) -> AgentReport:
        if agent_id not in ("sceptic", "security", "semantic", "logic"):
            raise ValueError(f"no rule backend for agent {agent_id!r}")
        tokens = token_estimate(render_agent_prompt(agent_id, region, bundle, memory, claims))
        unit = Unit.of(scope if scope is not None else region)
        name = region.function_name or (scope.function_name if scope else None) or clike.function_name_of(unit.code)
        if agent_id == "sceptic":
            counter, facts = sceptic_claims(unit, region, bundle, claims, memory, name)
            return AgentReport(
                "sceptic",
                counter_claims=tuple(counter),
                confidence=max((c.strength for c in counter), default=0.0),
                tokens_used=tokens,
                facts=tuple(facts),
            )
        if agent_id == "security":
            found = security_findings(unit, region, bundle, name)
        elif agent_id == "semantic":
            found = semantic_findings(unit, region)
        else:
            found = logic_findings(unit, region)
        found = [f for f in _dedupe(found) if within(region, f)]
        return AgentReport(
            agent_id,
            findings=tuple(found),
            confidence=max((f.confidence for f in found), default=0.0),
            tokens_used=tokens,
        )


def _dedupe(findings: list[Finding]) -> list[Finding]:
    best: dict[tuple[str, str, int], Finding] = {}
    for f in findings:
        k = (f.issue_type, f.location.file, f.location.line_start)
        if k not in best or f.confidence > best[k].confidence:
            best[k] = f
    return sorted(best.values(), key=lambda f: (f.location.line_start, f.issue_type))
